//! Step at which each training example is first learned.

use std::str::FromStr;

/// What counts as "learned" at an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LearnedRule {
    /// First evaluation at which the prediction matches the assigned label.
    #[default]
    FirstCorrect,
    /// First evaluation from which the prediction stays correct through the
    /// last evaluation seen so far.
    Persistent,
}

impl LearnedRule {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnedRule::FirstCorrect => "first_correct",
            LearnedRule::Persistent => "persistent",
        }
    }
}

impl FromStr for LearnedRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first_correct" => Ok(LearnedRule::FirstCorrect),
            "persistent" => Ok(LearnedRule::Persistent),
            other => Err(format!("unknown learned rule `{other}` (first_correct|persistent)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedTracker {
    rule: LearnedRule,
    steps: Vec<Option<usize>>,
}

impl LearnedTracker {
    pub fn new(n: usize, rule: LearnedRule) -> Self {
        LearnedTracker {
            rule,
            steps: vec![None; n],
        }
    }

    pub fn update(&mut self, step: usize, correct: &[bool]) {
        assert_eq!(correct.len(), self.steps.len(), "mask length");
        for (s, &ok) in self.steps.iter_mut().zip(correct) {
            *s = match (self.rule, ok) {
                (_, true) => s.or(Some(step)),
                (LearnedRule::FirstCorrect, false) => *s,
                (LearnedRule::Persistent, false) => None,
            };
        }
    }

    pub fn steps(&self) -> &[Option<usize>] {
        &self.steps
    }

    pub fn into_steps(self) -> Vec<Option<usize>> {
        self.steps
    }
}

/// Replays a history of `(step, correctness mask)` evaluations.
pub fn first_learned_tracking(history: &[(usize, Vec<bool>)], rule: LearnedRule) -> Vec<Option<usize>> {
    let n = history.first().map_or(0, |h| h.1.len());
    let mut tracker = LearnedTracker::new(n, rule);
    for (step, mask) in history {
        tracker.update(*step, mask);
    }
    tracker.into_steps()
}
