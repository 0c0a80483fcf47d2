use super::{NnError, ParamSlices};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam moment accumulators shaped like the parameter set they optimize.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new<P: ParamSlices + ?Sized>(params: &P) -> Self {
        let shapes = params.shapes();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update (beta1 0.9, beta2 0.999, eps 1e-8).
    ///
    /// Gradients are validated before anything is touched, so a rejected
    /// call leaves both parameters and moments as they were.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G, lr: f64) -> Result<(), NnError>
    where
        P: ParamSlices + ?Sized,
        G: ParamSlices + ?Sized,
    {
        let g = grads.slices();
        if g.len() != self.m.len() || g.iter().zip(&self.m).any(|(a, b)| a.len() != b.len()) {
            return Err(NnError::Shape(format!(
                "gradient shapes {:?} do not match optimizer state {:?}",
                g.iter().map(|s| s.len()).collect::<Vec<_>>(),
                self.m.iter().map(|s| s.len()).collect::<Vec<_>>()
            )));
        }
        if g.iter().any(|s| s.iter().any(|x| !x.is_finite())) {
            return Err(NnError::NonFinite("gradient"));
        }
        let mut p = params.slices_mut();
        if p.len() != g.len() || p.iter().zip(&g).any(|(a, b)| a.len() != b.len()) {
            return Err(NnError::Shape("parameter and gradient shapes differ".into()));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for (k, grad) in g.iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, &gi) in grad.iter().enumerate() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[k][i] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}

/// Polyak averaging: `target = (1 - tau) * target + tau * online`, written
/// so identical networks stay bit-identical.
pub fn soft_update<T, O>(target: &mut T, online: &O, tau: f64) -> Result<(), NnError>
where
    T: ParamSlices + ?Sized,
    O: ParamSlices + ?Sized,
{
    let src = online.slices();
    let mut dst = target.slices_mut();
    if src.len() != dst.len() || src.iter().zip(&dst).any(|(a, b)| a.len() != b.len()) {
        return Err(NnError::Shape("soft update between differently shaped networks".into()));
    }
    for (d, s) in dst.iter_mut().zip(src) {
        for (x, &y) in d.iter_mut().zip(s) {
            *x += tau * (y - *x);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity_on_params() {
        let mut p = vec![1.0, -2.0, 3.5];
        let mut st = AdamState::new(&p);
        st.step(&mut p, &vec![0.0; 3], 1e-3).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + 1e-8).
        let mut p = vec![0.5];
        let mut st = AdamState::new(&p);
        st.step(&mut p, &vec![1.0], 1e-3).unwrap();
        assert!((0.5 - p[0] - 1e-3).abs() < 1e-10);
    }

    #[test]
    fn identical_calls_are_deterministic() {
        let run = || {
            let mut p = vec![0.1, 0.2];
            let mut st = AdamState::new(&p);
            for _ in 0..5 {
                st.step(&mut p, &vec![0.3, -0.7], 3e-4).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_non_finite_gradient_without_side_effects() {
        let mut p = vec![1.0, 2.0];
        let mut st = AdamState::new(&p);
        let before = st.clone();
        assert!(matches!(
            st.step(&mut p, &vec![f64::INFINITY, 0.0], 1e-3),
            Err(NnError::NonFinite(_))
        ));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(st, before);
    }

    #[test]
    fn soft_update_limits() {
        let online = vec![1.0, 2.0];
        let mut t = vec![0.0, 0.0];
        soft_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, vec![0.0, 0.0]);
        soft_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);

        let mut s = vec![0.0];
        soft_update(&mut s, &vec![1.0], 0.005).unwrap();
        assert!((s[0] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn soft_update_shape_mismatch() {
        let mut t = vec![0.0; 3];
        assert!(soft_update(&mut t, &vec![1.0; 2], 0.5).is_err());
    }

    #[test]
    fn soft_update_drift_is_geometric() {
        let tau = 0.005;
        let online = vec![1.0, -3.0];
        let mut t = vec![0.0, 0.0];
        let gap = |t: &Vec<f64>| {
            t.iter()
                .zip(&online)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let mut prev = gap(&t);
        for _ in 0..50 {
            soft_update(&mut t, &online, tau).unwrap();
            let now = gap(&t);
            assert!((now / prev - (1.0 - tau)).abs() < 1e-12);
            prev = now;
        }
    }
}
