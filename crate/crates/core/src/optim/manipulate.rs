use crate::tensor::NamedGradients;

use super::{Granularity, Scope};

/// A named per-task gradient, already multiplied by its loss weight.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskGradient {
    pub name: String,
    pub grads: NamedGradients,
}

/// What happened to one auxiliary gradient in one step.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxStep {
    pub name: String,
    /// Negative inner product with the target over the manipulated scope.
    pub conflict: bool,
    pub pre_norm: f64,
    pub post_norm: f64,
    /// Some unit was projected onto the target's normal plane.
    pub projected: bool,
    /// Some unit was rescaled.
    pub balanced: bool,
    /// Units skipped because the target gradient vanished there.
    pub zero_target_units: usize,
}

impl AuxStep {
    /// `post_norm / pre_norm`, 1 for a zero gradient.
    pub fn scale(&self) -> f64 {
        if self.pre_norm > 0.0 {
            self.post_norm / self.pre_norm
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepDiagnostics {
    pub auxiliaries: Vec<AuxStep>,
}

impl StepDiagnostics {
    pub fn conflict_proportion(&self) -> f64 {
        if self.auxiliaries.is_empty() {
            return 0.0;
        }
        self.auxiliaries.iter().filter(|a| a.conflict).count() as f64 / self.auxiliaries.len() as f64
    }
}

/// Result of combining task gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Manipulated {
    /// `G = g_tar + Σ_i g_aux,i′`.
    pub combined: NamedGradients,
    /// The auxiliaries after manipulation, in input order.
    pub auxiliaries: Vec<NamedGradients>,
    pub diagnostics: StepDiagnostics,
}

fn in_scope(name: &str, scope: Scope) -> bool {
    match scope {
        Scope::All => true,
        Scope::Embeddings => name.starts_with("embedding."),
    }
}

/// Groups of parameter names whose norms and inner products are taken
/// jointly.
pub(crate) fn units(
    a: &NamedGradients,
    b: &NamedGradients,
    granularity: Granularity,
    scope: Scope,
) -> Vec<Vec<String>> {
    let mut names: Vec<String> = a
        .names()
        .chain(b.names())
        .filter(|n| in_scope(n, scope))
        .map(String::from)
        .collect();
    names.sort();
    names.dedup();
    match granularity {
        Granularity::PerTensor => names.into_iter().map(|n| vec![n]).collect(),
        Granularity::Global if names.is_empty() => Vec::new(),
        Granularity::Global => vec![names],
    }
}

fn unit_dot(a: &NamedGradients, b: &NamedGradients, unit: &[String]) -> f64 {
    unit.iter().filter_map(|n| Some(a.get(n)?.dot(b.get(n)?))).sum()
}

fn unit_norm(a: &NamedGradients, unit: &[String]) -> f64 {
    unit.iter()
        .filter_map(|n| a.get(n))
        .map(|t| t.dot(t))
        .sum::<f64>()
        .sqrt()
}

fn unit_scale(a: &mut NamedGradients, unit: &[String], factor: f64) {
    for n in unit {
        if let Some(t) = a.get_mut(n) {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// `a += factor · b` on the unit.
fn unit_axpy(a: &mut NamedGradients, unit: &[String], factor: f64, b: &NamedGradients) {
    for n in unit {
        let Some(src) = b.get(n) else { continue };
        match a.get_mut(n) {
            Some(dst) => dst
                .data_mut()
                .iter_mut()
                .zip(src.data())
                .for_each(|(d, s)| *d += factor * s),
            None => {
                let mut t = src.clone();
                t.data_mut().iter_mut().for_each(|v| *v *= factor);
                a.insert(n.clone(), t);
            }
        }
    }
}

enum Projection {
    None,
    Applied,
    ZeroTarget,
}

fn project_unit(aux: &mut NamedGradients, tar: &NamedGradients, unit: &[String]) -> Projection {
    let tar_sq = unit_dot(tar, tar, unit);
    if tar_sq == 0.0 {
        return Projection::ZeroTarget;
    }
    let d = unit_dot(aux, tar, unit);
    if d < 0.0 {
        unit_axpy(aux, unit, -d / tar_sq, tar);
        Projection::Applied
    } else {
        Projection::None
    }
}

/// Rescales so the norm becomes `r‖g_tar‖ + (1 − r)‖g_aux‖`. Returns
/// whether anything changed.
fn balance_unit(aux: &mut NamedGradients, tar_norm: f64, unit: &[String], r: f64) -> bool {
    let n = unit_norm(aux, unit);
    if n == 0.0 || r == 0.0 {
        return false;
    }
    unit_scale(aux, unit, r * tar_norm / n + (1.0 - r));
    true
}

/// Removes the component of `aux` along `tar` on every unit where the two
/// conflict (negative inner product). Units with a zero target are left
/// alone.
pub fn project_if_conflicting(
    aux: &NamedGradients,
    tar: &NamedGradients,
    granularity: Granularity,
) -> (NamedGradients, bool) {
    let mut out = aux.clone();
    let mut applied = false;
    for unit in units(aux, tar, granularity, Scope::All) {
        applied |= matches!(project_unit(&mut out, tar, &unit), Projection::Applied);
    }
    (out, applied)
}

/// `g_aux ← r (‖g_tar‖/‖g_aux‖) g_aux + (1 − r) g_aux` per unit; zero
/// auxiliary units are unchanged.
pub fn balance_magnitude(
    aux: &NamedGradients,
    tar: &NamedGradients,
    r: f64,
    granularity: Granularity,
) -> NamedGradients {
    let mut out = aux.clone();
    for unit in units(aux, tar, granularity, Scope::All) {
        let tn = unit_norm(tar, &unit);
        balance_unit(&mut out, tn, &unit, r);
    }
    out
}

/// Which manipulation runs on each unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Rule {
    /// Only when `‖aux‖ > ‖tar‖`: sign-gated projection, then balancing.
    Hybrid,
    /// Sign-gated projection on every unit, no balancing.
    ProjectOnly,
    /// Balancing on every unit, no projection.
    BalanceOnly,
    /// Sign-gated projection then balancing on every unit.
    ProjectThenBalance,
    /// Nothing.
    Identity,
}

pub(crate) fn apply(
    rule: Rule,
    target: &NamedGradients,
    auxiliaries: &[TaskGradient],
    r: f64,
    granularity: Granularity,
    scope: Scope,
) -> Manipulated {
    let mut combined = target.clone();
    let mut outs = Vec::with_capacity(auxiliaries.len());
    let mut diagnostics = StepDiagnostics::default();
    for task in auxiliaries {
        let aux = &task.grads;
        let unit_list = units(aux, target, granularity, scope);
        let scoped: Vec<String> = unit_list.iter().flatten().cloned().collect();
        let mut step = AuxStep {
            name: task.name.clone(),
            conflict: unit_dot(aux, target, &scoped) < 0.0,
            pre_norm: unit_norm(aux, &scoped),
            post_norm: 0.0,
            projected: false,
            balanced: false,
            zero_target_units: 0,
        };
        let mut out: Option<NamedGradients> = None;
        for unit in &unit_list {
            let tn = unit_norm(target, unit);
            let an = unit_norm(out.as_ref().unwrap_or(aux), unit);
            let (project, balance) = match rule {
                Rule::Hybrid if an > tn => (true, true),
                Rule::Hybrid | Rule::Identity => (false, false),
                Rule::ProjectOnly => (true, false),
                Rule::BalanceOnly => (false, true),
                Rule::ProjectThenBalance => (true, true),
            };
            if !project && !balance {
                continue;
            }
            if tn == 0.0 {
                step.zero_target_units += 1;
                continue;
            }
            let g = out.get_or_insert_with(|| aux.clone());
            if project && matches!(project_unit(g, target, unit), Projection::Applied) {
                step.projected = true;
            }
            if balance && balance_unit(g, tn, unit, r) {
                step.balanced = true;
            }
        }
        let out = out.unwrap_or_else(|| aux.clone());
        step.post_norm = unit_norm(&out, &scoped);
        combined.add_scaled(&out, 1.0);
        outs.push(out);
        diagnostics.auxiliaries.push(step);
    }
    Manipulated {
        combined,
        auxiliaries: outs,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn g(v: &[f64]) -> NamedGradients {
        let mut n = NamedGradients::new();
        n.insert("w", Tensor::row_vector(v.to_vec()));
        n
    }

    fn v(n: &NamedGradients) -> Vec<f64> {
        n.get("w").unwrap().data().to_vec()
    }

    #[test]
    fn projection_fixtures() {
        let (out, applied) = project_if_conflicting(&g(&[1.0, 1.0]), &g(&[0.0, 1.0]), Granularity::PerTensor);
        assert_eq!((v(&out), applied), (vec![1.0, 1.0], false));

        let (out, applied) = project_if_conflicting(&g(&[1.0, -1.0]), &g(&[0.0, 1.0]), Granularity::PerTensor);
        assert_eq!((v(&out), applied), (vec![1.0, 0.0], true));
        assert_eq!(out.dot(&g(&[0.0, 1.0])), 0.0);

        let (out, _) = project_if_conflicting(&g(&[-0.3, 2.0]), &g(&[0.3, -2.0]), Granularity::PerTensor);
        assert!(v(&out).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn balance_fixtures() {
        let tar = g(&[1.5, 2.0]);
        let out = balance_magnitude(&g(&[3.0, 4.0]), &tar, 1.0, Granularity::PerTensor);
        assert_eq!(v(&out), vec![1.5, 2.0]);
        let out = balance_magnitude(&g(&[3.0, 4.0]), &tar, 0.0, Granularity::PerTensor);
        assert_eq!(v(&out), vec![3.0, 4.0]);
        let out = balance_magnitude(&g(&[3.0, 4.0]), &tar, 0.5, Granularity::PerTensor);
        assert_eq!(v(&out), vec![2.25, 3.0]);
        assert!((out.norm() - 3.75).abs() < 1e-12);
        let out = balance_magnitude(&g(&[0.0, 0.0]), &tar, 0.5, Granularity::PerTensor);
        assert_eq!(v(&out), vec![0.0, 0.0]);
    }

    fn task(name: &str, grads: NamedGradients) -> TaskGradient {
        TaskGradient {
            name: name.into(),
            grads,
        }
    }

    #[test]
    fn hybrid_composes_projection_and_balance() {
        let m = apply(
            Rule::Hybrid,
            &g(&[0.0, 1.0]),
            &[task("a", g(&[2.0, -2.0]))],
            1.0,
            Granularity::PerTensor,
            Scope::All,
        );
        assert_eq!(v(&m.auxiliaries[0]), vec![1.0, 0.0]);
        assert_eq!(v(&m.combined), vec![1.0, 1.0]);
        let d = &m.diagnostics.auxiliaries[0];
        assert!(d.conflict && d.projected && d.balanced);
        assert!((d.pre_norm - 8f64.sqrt()).abs() < 1e-15);
        assert_eq!(d.post_norm, 1.0);
    }

    #[test]
    fn small_auxiliaries_pass_through() {
        let m = apply(
            Rule::Hybrid,
            &g(&[0.0, 10.0]),
            &[task("a", g(&[1.0, -2.0])), task("b", g(&[0.5, 0.5]))],
            0.7,
            Granularity::PerTensor,
            Scope::All,
        );
        assert_eq!(v(&m.combined), vec![1.5, 8.5]);
        assert!(m.diagnostics.auxiliaries.iter().all(|d| !d.projected && !d.balanced));
        assert_eq!(m.diagnostics.conflict_proportion(), 0.5);
    }

    #[test]
    fn zero_relax_without_conflict_is_plain_sum() {
        let m = apply(
            Rule::Hybrid,
            &g(&[0.0, 1.0]),
            &[task("a", g(&[5.0, 3.0]))],
            0.0,
            Granularity::PerTensor,
            Scope::All,
        );
        assert_eq!(v(&m.combined), vec![5.0, 4.0]);
    }

    #[test]
    fn scope_limits_manipulation_to_embeddings() {
        let mut tar = NamedGradients::new();
        tar.insert("embedding.user", Tensor::row_vector(vec![0.0, 1.0]));
        tar.insert("propagation.0.weight", Tensor::row_vector(vec![0.0, 1.0]));
        let mut aux = NamedGradients::new();
        aux.insert("embedding.user", Tensor::row_vector(vec![2.0, -2.0]));
        aux.insert("propagation.0.weight", Tensor::row_vector(vec![2.0, -2.0]));
        let m = apply(
            Rule::Hybrid,
            &tar,
            &[task("a", aux)],
            1.0,
            Granularity::PerTensor,
            Scope::Embeddings,
        );
        let out = &m.auxiliaries[0];
        assert_eq!(out.get("embedding.user").unwrap().data(), &[1.0, 0.0]);
        assert_eq!(out.get("propagation.0.weight").unwrap().data(), &[2.0, -2.0]);
    }

    #[test]
    fn zero_target_unit_is_skipped() {
        let mut tar = NamedGradients::new();
        tar.insert("x", Tensor::row_vector(vec![1.0]));
        let mut aux = NamedGradients::new();
        aux.insert("x", Tensor::row_vector(vec![0.1]));
        aux.insert("y", Tensor::row_vector(vec![3.0]));
        let m = apply(
            Rule::Hybrid,
            &tar,
            &[task("a", aux.clone())],
            1.0,
            Granularity::PerTensor,
            Scope::All,
        );
        assert_eq!(m.auxiliaries[0], aux);
        assert_eq!(m.diagnostics.auxiliaries[0].zero_target_units, 1);
    }

    #[test]
    fn global_granularity_uses_flattened_norms() {
        let mut tar = NamedGradients::new();
        tar.insert("x", Tensor::row_vector(vec![3.0]));
        tar.insert("y", Tensor::row_vector(vec![4.0]));
        let mut aux = NamedGradients::new();
        aux.insert("x", Tensor::row_vector(vec![6.0]));
        aux.insert("y", Tensor::row_vector(vec![8.0]));
        let out = balance_magnitude(&aux, &tar, 1.0, Granularity::Global);
        assert_eq!(out, tar);
        let per = balance_magnitude(&aux, &tar, 1.0, Granularity::PerTensor);
        assert_eq!(per, tar);
        // a unit-wise conflict that vanishes globally
        let mut a2 = NamedGradients::new();
        a2.insert("x", Tensor::row_vector(vec![-1.0]));
        a2.insert("y", Tensor::row_vector(vec![2.0]));
        assert!(!project_if_conflicting(&a2, &tar, Granularity::Global).1);
        assert!(project_if_conflicting(&a2, &tar, Granularity::PerTensor).1);
    }
}
