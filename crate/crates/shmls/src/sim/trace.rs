//! Simulation traces and the initiation-interval measurement.

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct StageTrace {
    pub name: String,
    pub declared_ii: u64,
    pub firings: u64,
    pub stalls: u64,
    pub first_firing: Option<u64>,
    pub last_firing: u64,
    /// Inter-firing gaps in firing order; omitted from JSON.
    #[serde(skip)]
    pub gaps: Vec<u32>,
    /// Median inter-firing gap after warmup, when measurable.
    pub steady_ii: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FifoTrace {
    pub name: String,
    pub capacity: u32,
    pub pushed: u64,
    pub popped: u64,
    pub max_occupancy: u32,
    pub final_occupancy: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimTrace {
    pub mode: String,
    pub total_cycles: u64,
    pub prologue_cycles: u64,
    pub output_values: u64,
    pub points_per_cycle: f64,
    pub stages: Vec<StageTrace>,
    pub fifos: Vec<FifoTrace>,
}

#[derive(Debug, Clone)]
pub enum MeasureError {
    NoSuchStage(String),
    InsufficientFirings { stage: String, firings: u64 },
}

impl std::fmt::Display for MeasureError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeasureError::NoSuchStage(s) => write!(f, "no stage named `{s}`"),
            MeasureError::InsufficientFirings { stage, firings } => write!(
                f,
                "stage `{stage}` fired {firings} times; at least 10 needed to measure II"
            ),
        }
    }
}

impl std::error::Error for MeasureError {}

/// Steady-state II of a stage: the median inter-firing gap excluding the
/// warmup prefix (first 10% of firings, at least 10, but always leaving one
/// gap to measure).
pub fn measure_ii(trace: &SimTrace, stage: &str) -> Result<u64, MeasureError> {
    let st = trace
        .stages
        .iter()
        .find(|s| s.name == stage)
        .ok_or_else(|| MeasureError::NoSuchStage(stage.to_string()))?;
    steady_ii_of(st).ok_or(MeasureError::InsufficientFirings {
        stage: stage.to_string(),
        firings: st.firings,
    })
}

pub(crate) fn steady_ii_of(st: &StageTrace) -> Option<u64> {
    let n = st.firings;
    if n < 10 {
        return None;
    }
    let warmup = (n.div_ceil(10)).max(10).min(n - 2) as usize;
    // Gap k sits between firing k and firing k+1; skipping `warmup` firings
    // leaves gaps[warmup-1..] measured entirely after the warmup prefix.
    let tail = &st.gaps[(warmup - 1).min(st.gaps.len().saturating_sub(1))..];
    if tail.is_empty() {
        return None;
    }
    let mut sorted: Vec<u32> = tail.to_vec();
    sorted.sort_unstable();
    Some(sorted[(sorted.len() - 1) / 2] as u64)
}

impl SimTrace {
    pub(crate) fn fill_steady_ii(&mut self) {
        for st in &mut self.stages {
            st.steady_ii = steady_ii_of(st);
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageTrace> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Compute stages in stage order.
    pub fn compute_stages(&self) -> impl Iterator<Item = &StageTrace> {
        self.stages.iter().filter(|s| s.name.starts_with("compute"))
    }

    /// One-line-per-stage human summary.
    pub fn summary(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "mode={} cycles={} (prologue {}) outputs={} throughput={:.4} points/cycle",
            self.mode, self.total_cycles, self.prologue_cycles, self.output_values, self.points_per_cycle
        );
        for s in &self.stages {
            let ii = s
                .steady_ii
                .map(|v| v.to_string())
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "  {:<24} firings={:<8} stalls={:<8} II={}",
                s.name, s.firings, s.stalls, ii
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mk(firings: u64, gaps: Vec<u32>) -> StageTrace {
        StageTrace {
            name: "compute_0".into(),
            declared_ii: 1,
            firings,
            stalls: 0,
            first_firing: Some(0),
            last_firing: 0,
            gaps,
            steady_ii: None,
        }
    }

    #[test]
    fn median_gap_after_warmup() {
        // 100 firings, first 15 gaps noisy, rest exactly 1.
        let mut gaps = vec![5u32; 15];
        gaps.extend(vec![1u32; 84]);
        let st = mk(100, gaps);
        assert_eq!(steady_ii_of(&st), Some(1));
    }

    #[test]
    fn insufficient_firings() {
        let st = mk(9, vec![1; 8]);
        assert_eq!(steady_ii_of(&st), None);
    }

    #[test]
    fn exactly_ten_firings_measurable() {
        let st = mk(10, vec![3; 9]);
        assert_eq!(steady_ii_of(&st), Some(3));
    }
}
