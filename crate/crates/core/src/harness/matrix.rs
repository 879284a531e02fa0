use crate::error::{Error, Result};
use crate::grid_scan::{expand_strategy, ScanDirection, StrategySpec};

/// Strategies already used in published backbones, with the experiment that reproduces each.
pub const LITERATURE: [(&str, &str); 5] =
    [("Samba", "Exp1"), ("Vim", "Exp13"), ("VMamba", "Exp19"), ("PlainMamba", "Exp21"), ("RSMamba", "Exp22")];

/// The 22 scanning strategies, labelled `Exp1`..`Exp22`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentMatrix {
    specs: Vec<StrategySpec>,
}

impl ExperimentMatrix {
    pub fn specs(&self) -> &[StrategySpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&StrategySpec> {
        self.specs.iter().find(|s| s.label() == label)
    }

    /// Keeps only the listed labels, in the order given.
    pub fn subset(&self, labels: &[&str]) -> Result<ExperimentMatrix> {
        let specs = labels
            .iter()
            .map(|l| self.get(l.trim()).cloned().ok_or_else(|| Error::UnknownLabel(l.to_string())))
            .collect::<Result<_>>()?;
        Ok(ExperimentMatrix { specs })
    }
}

fn dirs(ids: &[usize]) -> Vec<ScanDirection> {
    ids.iter().map(|&k| ScanDirection::from_index(k).expect("direction index 1..=12")).collect()
}

pub fn build_experiment_matrix() -> ExperimentMatrix {
    let mut lists: Vec<Vec<ScanDirection>> = (1..=12).map(|k| dirs(&[k])).collect();
    lists.extend((0..6).map(|p| dirs(&[2 * p + 1, 2 * p + 2])));
    lists.push(dirs(&[1, 2, 3, 4]));
    lists.push(dirs(&[5, 6, 7, 8]));
    lists.push(dirs(&[9, 10, 11, 12]));
    lists.push(dirs(&[1, 2, 3, 4, 5, 6, 7, 8]));
    let specs = lists
        .iter()
        .enumerate()
        .map(|(i, l)| expand_strategy(l).expect("valid strategy length").with_label(format!("Exp{}", i + 1)))
        .collect();
    ExperimentMatrix { specs }
}

/// Resolves `"Exp19"`, `"D1,D2"` or `"D1+D2"`.
pub fn strategy_from_str(s: &str) -> Result<StrategySpec> {
    let t = s.trim();
    if t.starts_with("Exp") || t.starts_with("exp") {
        let label = format!("Exp{}", &t[3..]);
        return build_experiment_matrix().get(&label).cloned().ok_or_else(|| Error::UnknownLabel(s.to_string()));
    }
    let directions = t.split([',', '+']).map(str::parse).collect::<Result<Vec<ScanDirection>>>()?;
    expand_strategy(&directions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ScanDirection::*;

    #[test]
    fn matrix_contents() {
        let m = build_experiment_matrix();
        assert_eq!(m.len(), 22);
        assert_eq!(m.get("Exp1").unwrap().slots(), &[D1; 8]);
        assert_eq!(m.get("Exp12").unwrap().slots(), &[D12; 8]);
        assert_eq!(m.get("Exp19").unwrap().slots(), &[D1, D2, D3, D4, D1, D2, D3, D4]);
        assert_eq!(m.get("Exp13").unwrap().directions(), &[D1, D2]);
        assert_eq!(m.get("Exp18").unwrap().directions(), &[D11, D12]);
        assert_eq!(m.get("Exp20").unwrap().directions(), &[D5, D6, D7, D8]);
        assert_eq!(m.get("Exp21").unwrap().directions(), &[D9, D10, D11, D12]);
        assert_eq!(m.get("Exp22").unwrap().slots(), &[D1, D2, D3, D4, D5, D6, D7, D8]);
    }

    #[test]
    fn parse_labels_and_lists() {
        assert_eq!(strategy_from_str("Exp19").unwrap().label(), "Exp19");
        assert_eq!(strategy_from_str("D1,D2").unwrap().slots(), &[D1, D2, D1, D2, D1, D2, D1, D2]);
        assert_eq!(strategy_from_str("D3+D4").unwrap().directions(), &[D3, D4]);
        assert!(strategy_from_str("Exp23").is_err());
        assert!(strategy_from_str("D1,D2,D3").is_err());
    }

    #[test]
    fn subset_keeps_order() {
        let m = build_experiment_matrix().subset(&["Exp22", "Exp1"]).unwrap();
        let labels: Vec<_> = m.specs().iter().map(|s| s.label()).collect();
        assert_eq!(labels, ["Exp22", "Exp1"]);
        assert!(build_experiment_matrix().subset(&["Exp0"]).is_err());
    }
}
