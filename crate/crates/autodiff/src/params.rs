use ndarray::ArrayD;
use std::collections::BTreeMap;

/// Named parameter arrays, deterministically ordered by name.
///
/// Values are kept f32-representable at rest (enforced after init and after
/// every optimizer step) so that the 32-bit on-disk checkpoint format
/// round-trips bit-exactly.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    map: BTreeMap<String, ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<f64>) {
        assert!(
            self.map.insert(name.to_string(), value).is_none(),
            "duplicate parameter `{name}`"
        );
    }

    pub fn set(&mut self, name: &str, value: ArrayD<f64>) {
        self.map.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn count_scalars(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }

    /// Merge another store under a `prefix.` namespace.
    pub fn absorb(&mut self, prefix: &str, other: ParamStore) {
        for (name, value) in other.map {
            self.insert(&format!("{prefix}.{name}"), value);
        }
    }

    /// Split out the sub-store under `prefix.`, stripping the prefix.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let pat = format!("{prefix}.");
        let mut out = ParamStore::new();
        for (name, value) in &self.map {
            if let Some(stripped) = name.strip_prefix(&pat) {
                out.insert(stripped, value.clone());
            }
        }
        out
    }

    /// Round every value to the nearest f32. Applied after initialization and
    /// after each optimizer step to keep the store exactly representable in
    /// the 32-bit checkpoint encoding.
    pub fn round_to_f32(&mut self) {
        for value in self.map.values_mut() {
            value.mapv_inplace(|x| x as f32 as f64);
        }
    }
}
