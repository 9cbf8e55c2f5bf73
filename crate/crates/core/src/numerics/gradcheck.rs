use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Added to every analytic gradient entry before comparison. Only used to
    /// prove that the harness detects a broken gradient.
    pub corrupt_analytic: f64,
    /// Check at most this many entries per parameter (evenly strided); `None` checks all.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            corrupt_analytic: 0.0,
            max_entries_per_param: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub trainable: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub loss: f64,
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }

    pub fn entries_checked(&self) -> usize {
        self.params.iter().map(|p| p.entries_checked).sum()
    }
}

/// `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// finite differences for every parameter entry in `store`. Frozen parameters
/// must receive an exactly zero analytic gradient.
pub fn grad_check<F>(f: F, store: &ParamStore, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let loss_value = g.value(loss).data()[0];
    if !loss_value.is_finite() {
        return Err(Error::Evaluation(
            "loss is not finite at the base point".into(),
        ));
    }
    let grads = g.backward(loss)?;
    let analytic: std::collections::HashMap<String, Vec<f64>> = g
        .param_grads(&grads)
        .into_iter()
        .map(|(n, t)| (n, t.into_data()))
        .collect();

    let eval = |s: &ParamStore, name: &str| -> Result<f64> {
        let mut g = Graph::new();
        let l = f(&mut g, s)?;
        let v = g.value(l).data()[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation(format!(
                "non-finite loss while perturbing '{name}'"
            )))
        }
    };

    let mut work = store.clone();
    let mut params = Vec::new();
    let mut worst = None;
    let mut max_rel = 0.0f64;
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let p = store.get(&name)?;
        let n = p.value.len();
        let zeros = vec![0.0; n];
        let a = analytic.get(&name).unwrap_or(&zeros);
        if !p.trainable {
            let nonzero = a.iter().any(|v| *v != 0.0);
            let err = if nonzero { f64::INFINITY } else { 0.0 };
            if nonzero {
                worst = Some((name.clone(), 0));
            }
            max_rel = max_rel.max(err);
            params.push(ParamCheck {
                name,
                entries_checked: n,
                max_rel_error: err,
                trainable: false,
            });
            continue;
        }
        let stride = opts
            .max_entries_per_param
            .map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        let mut pmax = 0.0f64;
        let mut checked = 0;
        for i in (0..n).step_by(stride) {
            let orig = p.value.data()[i];
            work.get_mut(&name)?.value.data_mut()[i] = orig + opts.eps;
            let plus = eval(&work, &name)?;
            work.get_mut(&name)?.value.data_mut()[i] = orig - opts.eps;
            let minus = eval(&work, &name)?;
            work.get_mut(&name)?.value.data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * opts.eps);
            let err = relative_error(a[i] + opts.corrupt_analytic, fd);
            if err > pmax {
                pmax = err;
            }
            if err > max_rel {
                max_rel = err;
                worst = Some((name.clone(), i));
            }
            checked += 1;
        }
        params.push(ParamCheck {
            name,
            entries_checked: checked,
            max_rel_error: pmax,
            trainable: true,
        });
    }
    Ok(GradCheckReport {
        loss: loss_value,
        params,
        max_rel_error: max_rel,
        worst,
        tol: opts.tol,
    })
}
