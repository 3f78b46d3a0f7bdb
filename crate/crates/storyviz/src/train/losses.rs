//! Adversarial losses on logits, in numerically stable log-sigmoid form:
//! `-log D = softplus(-logit)`, `-log(1 - D) = softplus(logit)`.

use autodiff::{Graph, Var};
use serde::{Deserialize, Serialize};

/// `L_D = -E[log D(real)] - E[log(1 - D(fake))]` over logit vectors.
pub fn gan_d_loss(g: &mut Graph, real_logits: Var, fake_logits: Var) -> Var {
    let nr = g.neg(real_logits);
    let sp_real = g.softplus(nr);
    let a = g.mean_all(sp_real);
    let sp_fake = g.softplus(fake_logits);
    let b = g.mean_all(sp_fake);
    g.add(a, b)
}

/// Non-saturating `L_G = -E[log D(fake)]`.
pub fn gan_g_loss(g: &mut Graph, fake_logits: Var) -> Var {
    let nf = g.neg(fake_logits);
    let sp = g.softplus(nf);
    g.mean_all(sp)
}

/// The four loss values of one training step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_gi: f64,
    pub l_di: f64,
    pub l_gv: f64,
    pub l_dv: f64,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        self.l_gi.is_finite() && self.l_di.is_finite() && self.l_gv.is_finite() && self.l_dv.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    fn logits(g: &mut Graph, vals: &[f64]) -> Var {
        g.input(ArrayD::from_shape_vec(IxDyn(&[vals.len()]), vals.to_vec()).unwrap())
    }

    #[test]
    fn zero_logits_give_ln2_losses() {
        let mut g = Graph::new();
        let real = logits(&mut g, &[0.0, 0.0, 0.0]);
        let fake = logits(&mut g, &[0.0, 0.0, 0.0]);
        let ld = gan_d_loss(&mut g, real, fake);
        let lg = gan_g_loss(&mut g, fake);
        let two_ln2 = 2.0 * std::f64::consts::LN_2;
        assert!((g.scalar_value(ld) - two_ln2).abs() < 1e-6);
        assert!((g.scalar_value(lg) - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn perfect_discriminator_drives_ld_to_zero() {
        let mut g = Graph::new();
        let real = logits(&mut g, &[30.0]);
        let fake = logits(&mut g, &[-30.0]);
        let ld = gan_d_loss(&mut g, real, fake);
        assert!(g.scalar_value(ld) < 1e-9);
    }

    #[test]
    fn lg_is_monotone_decreasing_in_fake_logit() {
        let mut prev = f64::INFINITY;
        for logit in [-5.0, -1.0, 0.0, 1.0, 5.0, 20.0] {
            let mut g = Graph::new();
            let fake = logits(&mut g, &[logit]);
            let node = gan_g_loss(&mut g, fake);
            let lg = g.scalar_value(node);
            assert!(lg < prev, "L_G must fall as the fake logit rises");
            prev = lg;
        }
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let mut g = Graph::new();
        let real = logits(&mut g, &[-500.0]);
        let fake = logits(&mut g, &[500.0]);
        let ld = gan_d_loss(&mut g, real, fake);
        assert!(g.scalar_value(ld).is_finite());
        let lg = gan_g_loss(&mut g, fake);
        assert!(g.scalar_value(lg).is_finite());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        use autodiff::ParamStore;
        let mut store = ParamStore::new();
        store.insert(
            "real",
            ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.3, -1.2, 0.7]).unwrap(),
        );
        store.insert(
            "fake",
            ArrayD::from_shape_vec(IxDyn(&[3]), vec![-0.4, 0.9, 0.1]).unwrap(),
        );
        autodiff::check_gradients(
            &store,
            |s, g| {
                let real = g.param(s, "real");
                let fake = g.param(s, "fake");
                let ld = gan_d_loss(g, real, fake);
                let lg = gan_g_loss(g, fake);
                g.add(ld, lg)
            },
            1e-5,
            1e-4,
            1e-9,
        )
        .unwrap();
    }
}
