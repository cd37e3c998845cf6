//! Confusion counts, the five fairness measures and the two disparity
//! forms.

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Increments the cell selected by (predicted, truth).
    pub fn record(&mut self, predicted: bool, truth: bool) {
        match (predicted, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn cell(&self, cell: Cell) -> u64 {
        match cell {
            Cell::Tp => self.tp,
            Cell::Fp => self.fp,
            Cell::Fn => self.fn_,
            Cell::Tn => self.tn,
        }
    }

    pub fn with_cell_zeroed(mut self, cell: Cell) -> Self {
        match cell {
            Cell::Tp => self.tp = 0,
            Cell::Fp => self.fp = 0,
            Cell::Fn => self.fn_ = 0,
            Cell::Tn => self.tn = 0,
        }
        self
    }

    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }

    pub fn ppv(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn positive_rate(&self) -> Option<f64> {
        ratio(self.tp + self.fp, self.total())
    }
}

impl core::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

impl core::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl core::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell {
    Tp,
    Fp,
    Fn,
    Tn,
}

impl Cell {
    pub const ALL: [Cell; 4] = [Cell::Tp, Cell::Fp, Cell::Fn, Cell::Tn];

    pub fn of(predicted: bool, truth: bool) -> Self {
        match (predicted, truth) {
            (true, true) => Cell::Tp,
            (true, false) => Cell::Fp,
            (false, true) => Cell::Fn,
            (false, false) => Cell::Tn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

/// Group fairness measures. Each is a conditional probability
/// `Pr(alpha | beta)` over the (predicted, truth) events of a
/// correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Measure {
    /// `Pr(h = y)`: accuracy.
    #[serde(rename = "accuracy-parity")]
    AccuracyParity,
    /// `Pr(h = M)`: positive prediction rate.
    #[serde(rename = "statistical-parity")]
    StatisticalParity,
    /// `Pr(h = M | y = M)`: true positive rate (equal opportunity).
    #[serde(rename = "tprp")]
    Tprp,
    /// `Pr(h = M | y = N)`: false positive rate.
    #[serde(rename = "fprp")]
    Fprp,
    /// `Pr(y = M | h = M)`: positive predictive value.
    #[serde(rename = "ppvp")]
    Ppvp,
}

impl Measure {
    pub const ALL: [Measure; 5] = [
        Measure::AccuracyParity,
        Measure::StatisticalParity,
        Measure::Tprp,
        Measure::Fprp,
        Measure::Ppvp,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Measure::AccuracyParity => "accuracy-parity",
            Measure::StatisticalParity => "statistical-parity",
            Measure::Tprp => "tprp",
            Measure::Fprp => "fprp",
            Measure::Ppvp => "ppvp",
        }
    }

    pub fn orientation(self) -> Orientation {
        match self {
            Measure::Fprp => Orientation::LowerBetter,
            _ => Orientation::HigherBetter,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Measure::AccuracyParity => "share of correct match decisions, Pr(h = y)",
            Measure::StatisticalParity => "share of pairs predicted as matches, Pr(h = M)",
            Measure::Tprp => "recall among true matches, Pr(h = M | y = M)",
            Measure::Fprp => "false match rate among true non-matches, Pr(h = M | y = N)",
            Measure::Ppvp => "precision among predicted matches, Pr(y = M | h = M)",
        }
    }

    /// Measure value, or `None` when its conditioning event never occurs.
    pub fn value(self, c: &ConfusionCounts) -> Option<f64> {
        match self {
            Measure::AccuracyParity => c.accuracy(),
            Measure::StatisticalParity => c.positive_rate(),
            Measure::Tprp => c.tpr(),
            Measure::Fprp => c.fpr(),
            Measure::Ppvp => c.ppv(),
        }
    }

    /// Disparity of a group against the overall value, oriented so that
    /// only the disadvantaged side counts. Lower-better measures compare
    /// `1 - value`.
    pub fn disparity(self, overall: f64, group: f64, mode: DisparityMode) -> Option<f64> {
        match self.orientation() {
            Orientation::HigherBetter => disparity(overall, group, mode),
            Orientation::LowerBetter => disparity(1.0 - overall, 1.0 - group, mode),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Measure {
    type Err = alloc::string::String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Measure::ALL
            .into_iter()
            .find(|m| m.id() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| alloc::format!("unknown measure `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisparityMode {
    Subtraction,
    Division,
}

impl DisparityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DisparityMode::Subtraction => "subtraction",
            DisparityMode::Division => "division",
        }
    }
}

impl FromStr for DisparityMode {
    type Err = alloc::string::String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "subtraction" => Ok(DisparityMode::Subtraction),
            "division" => Ok(DisparityMode::Division),
            other => Err(alloc::format!("unknown disparity mode `{other}`")),
        }
    }
}

/// One-sided disparity of a group value against the overall value.
///
/// Subtraction: `max(0, overall - group)`.
/// Division: `max(0, 1 - group / overall)`, undefined when `overall` is 0.
pub fn disparity(overall: f64, group: f64, mode: DisparityMode) -> Option<f64> {
    if !overall.is_finite() || !group.is_finite() {
        return None;
    }
    match mode {
        DisparityMode::Subtraction => Some(f64::max(0.0, overall - group)),
        DisparityMode::Division => (overall != 0.0).then(|| f64::max(0.0, 1.0 - group / overall)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_cell_example() {
        let c = ConfusionCounts::new(1, 1, 1, 1);
        assert_eq!(c.tpr(), Some(0.5));
        assert_eq!(c.ppv(), Some(0.5));
        assert_eq!(c.accuracy(), Some(0.5));
    }

    #[test]
    fn undefined_and_perfect() {
        assert_eq!(Measure::Tprp.value(&ConfusionCounts::new(0, 0, 0, 10)), None);
        assert_eq!(Measure::Ppvp.value(&ConfusionCounts::new(10, 0, 0, 0)), Some(1.0));
    }

    #[test]
    fn disparity_examples() {
        for mode in [DisparityMode::Subtraction, DisparityMode::Division] {
            assert_eq!(disparity(0.8, 0.8, mode), Some(0.0));
            assert_eq!(disparity(0.8, 0.9, mode), Some(0.0));
        }
        let s = disparity(0.8, 0.6, DisparityMode::Subtraction).unwrap();
        let d = disparity(0.8, 0.6, DisparityMode::Division).unwrap();
        assert!((s - 0.2).abs() < 1e-12);
        assert!((d - 0.25).abs() < 1e-12);
        assert_eq!(disparity(0.0, 0.0, DisparityMode::Division), None);
    }

    #[test]
    fn lower_better_flips() {
        // group FPR above overall is the disadvantaged side
        let d = Measure::Fprp.disparity(0.1, 0.3, DisparityMode::Subtraction).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
        assert_eq!(Measure::Fprp.disparity(0.3, 0.1, DisparityMode::Subtraction), Some(0.0));
    }

    #[test]
    fn ids_round_trip() {
        for m in Measure::ALL {
            assert_eq!(m.id().parse::<Measure>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, alloc::format!("\"{}\"", m.id()));
        }
    }
}
