//! A stand-in for a fine-tuned model: parses the prompt, solves it with a
//! classical planner and streams the plan back line by line.

use std::sync::Arc;
use std::time::Duration;

use crate::artobj::{merge_statics, ChainConfig};
use crate::dataset::{build_completion, split_prompt};
use crate::pddl::DomainDef;
use crate::solver::{Outcome, Solver};

use super::{ChunkSink, CompletionRequest, CompletionSource, ProviderError, SourceEnd, SourceError};

pub struct EmulatedSource {
    domain: DomainDef,
    chain: ChainConfig,
    solver: Arc<dyn Solver>,
    line_delay: Duration,
}

impl EmulatedSource {
    pub fn new(domain: DomainDef, chain: ChainConfig, solver: Arc<dyn Solver>, line_delay: Duration) -> Self {
        EmulatedSource { domain, chain, solver, line_delay }
    }

    /// The full completion text the model would produce for `prompt`.
    pub fn completion_for(&self, prompt: &str) -> Result<String, ProviderError> {
        let parts = split_prompt(prompt)
            .ok_or_else(|| ProviderError::Planner("prompt lacks the expected terminator".into()))?;
        let problem = merge_statics(&self.chain, &self.domain, "emulated", parts.problem)
            .map_err(|e| ProviderError::Planner(format!("unparsable prompt: {e}")))?;
        let result = self.solver.solve(&self.domain, &problem);
        match result.outcome {
            Outcome::Solved(plan) => Ok(build_completion(&plan)),
            Outcome::Exhausted => Err(ProviderError::Planner("search space exhausted".into())),
            Outcome::Timeout => Err(ProviderError::Planner("search timed out".into())),
        }
    }
}

impl CompletionSource for EmulatedSource {
    fn produce(&self, request: &CompletionRequest, sink: &mut ChunkSink) -> Result<SourceEnd, SourceError> {
        let text = self.completion_for(&request.prompt)?;
        for line in text.split_inclusive('\n') {
            if line.ends_with('\n') {
                sink.sleep(self.line_delay)?;
            }
            sink.emit(line)?;
        }
        Ok(SourceEnd::Complete)
    }
}
