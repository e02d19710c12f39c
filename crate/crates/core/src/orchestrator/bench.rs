//! Modification benchmark: executability, quality among executables, and success rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{account_usage, Prices};
use crate::agents::{modifier_dialogue, LlmClient, ModifyRequest, Usage};
use crate::dsl::Block;
use crate::graphops::is_isomorphic;
use crate::validate::Role;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSample {
    pub id: String,
    pub base: String,
    pub suggestion: String,
    /// Operation names the modified block must contain, read by [`ExpectOpsJudge`].
    #[serde(default)]
    pub expect_ops: Vec<String>,
}

/// Decides whether an executable modification meets its suggestion.
pub trait Judge: Sync {
    fn meets(&self, sample: &BenchSample, base: &Block, modified: &Block) -> bool;
}

/// Passes when the block changed structurally and contains every expected operation.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpectOpsJudge;

impl Judge for ExpectOpsJudge {
    fn meets(&self, sample: &BenchSample, base: &Block, modified: &Block) -> bool {
        if is_isomorphic(base, modified).unwrap_or(false) {
            return false;
        }
        sample.expect_ops.iter().all(|want| modified.nodes().any(|(_, op)| op.op.name() == want))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    pub executable: bool,
    pub correct: bool,
    pub usage: Usage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMetrics {
    pub samples: usize,
    pub executable: usize,
    pub correct: usize,
    /// Executability.
    pub e: f64,
    /// Quality among executables; 0 when nothing was executable (see `q_defined`).
    pub q: f64,
    /// Success rate.
    pub sr: f64,
    pub q_defined: bool,
    pub tokens: Usage,
    /// Per-sample total tokens, in thousands.
    pub tokens_mean_k: f64,
    pub tokens_std_k: f64,
    pub cost: f64,
    pub results: Vec<SampleResult>,
}

impl BenchMetrics {
    pub fn from_results(results: Vec<SampleResult>, prices: &Prices) -> BenchMetrics {
        let samples = results.len();
        let executable = results.iter().filter(|r| r.executable).count();
        let correct = results.iter().filter(|r| r.executable && r.correct).count();
        let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let mut tokens = Usage::default();
        for r in &results {
            tokens += r.usage;
        }
        let per: Vec<f64> = results.iter().map(|r| (r.usage.input_tokens + r.usage.output_tokens) as f64 / 1000.0).collect();
        let mean = if per.is_empty() { 0.0 } else { per.iter().sum::<f64>() / per.len() as f64 };
        let var = if per.is_empty() { 0.0 } else { per.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / per.len() as f64 };
        BenchMetrics {
            samples,
            executable,
            correct,
            e: frac(executable, samples),
            q: frac(correct, executable),
            sr: frac(correct, samples),
            q_defined: executable > 0,
            tokens,
            tokens_mean_k: mean,
            tokens_std_k: var.sqrt(),
            cost: account_usage(tokens, prices),
            results,
        }
    }
}

fn run_sample(sample: &BenchSample, llm: &dyn LlmClient, judge: &dyn Judge, max_retry: u32) -> SampleResult {
    let failed = |error: String, usage: Usage| SampleResult {
        id: sample.id.clone(),
        executable: false,
        correct: false,
        usage,
        error: Some(error),
    };
    let base = match crate::dsl::parse_block(&sample.base) {
        Ok(b) => b,
        Err(e) => return failed(format!("base block: {e}"), Usage::default()),
    };
    let request = ModifyRequest {
        base: &base,
        suggestion: &sample.suggestion,
        correctness_advice: &[],
        performance_advice: &[],
        role: Role::Cell,
        max_retry,
        bindings: &[],
    };
    match modifier_dialogue(&request, llm) {
        Ok(out) => match out.block {
            Some(block) => SampleResult {
                id: sample.id.clone(),
                executable: true,
                correct: judge.meets(sample, &base, &block),
                usage: out.dialogue.usage,
                error: None,
            },
            None => failed("retries exhausted".into(), out.dialogue.usage),
        },
        Err(e) => failed(e.to_string(), Usage::default()),
    }
}

/// Runs every sample's modification dialogue concurrently and scores the results.
pub fn run_benchmark(
    samples: &[BenchSample],
    llm: &dyn LlmClient,
    judge: &dyn Judge,
    max_retry: u32,
    prices: &Prices,
) -> BenchMetrics {
    let results: Vec<SampleResult> = samples.par_iter().map(|s| run_sample(s, llm, judge, max_retry)).collect();
    BenchMetrics::from_results(results, prices)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(executable: bool, correct: bool) -> SampleResult {
        SampleResult { id: String::new(), executable, correct, usage: Usage::default(), error: None }
    }

    #[test]
    fn nothing_executable_flags_quality() {
        let m = BenchMetrics::from_results(vec![result(false, false); 4], &Prices::default());
        assert_eq!((m.e, m.q, m.sr, m.q_defined), (0.0, 0.0, 0.0, false));
    }

    #[test]
    fn all_correct() {
        let m = BenchMetrics::from_results(vec![result(true, true); 3], &Prices::default());
        assert_eq!((m.e, m.q, m.sr), (1.0, 1.0, 1.0));
    }
}
