//! Optional entries from the first Axelrod tournament, using their commonly
//! published definitions. Downing and Anonymous are not provided.

use crate::game::Action;

use super::{History, Strategy};

/// Tit-for-tat that defects 10% of the time after an opponent cooperation.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstByJoss;

impl Strategy for FirstByJoss {
    fn cooperation_probability(&mut self, history: &History) -> f64 {
        match history.last() {
            None => 1.0,
            Some((_, Action::C)) => 0.9,
            Some((_, Action::D)) => 0.0,
        }
    }
}

/// Cooperates if both players did the same thing last round, otherwise
/// cooperates with probability 2/7.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstByGrofman;

impl Strategy for FirstByGrofman {
    fn cooperation_probability(&mut self, history: &History) -> f64 {
        match history.last() {
            None => 1.0,
            Some((own, opp)) if own == opp => 1.0,
            Some(_) => 2.0 / 7.0,
        }
    }
}

/// Tit-for-tat whose cooperation after an opponent C decays linearly from
/// 1.0 to 0.5 over 200 rounds.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstByFeld;

impl Strategy for FirstByFeld {
    fn cooperation_probability(&mut self, history: &History) -> f64 {
        match history.last() {
            None => 1.0,
            Some((_, Action::D)) => 0.0,
            Some((_, Action::C)) => (1.0 - 0.5 * history.len() as f64 / 200.0).max(0.5),
        }
    }
}

/// Cooperates for 11 rounds, then cooperates 10 points less often than the
/// opponent did over the previous 10 rounds.
#[derive(Debug, Clone, Copy, Default)]
pub struct FirstByTullock;

impl Strategy for FirstByTullock {
    fn cooperation_probability(&mut self, history: &History) -> f64 {
        let n = history.len();
        if n < 11 {
            return 1.0;
        }
        let recent = &history.turns()[n - 10..];
        let rate = recent.iter().filter(|t| t.1 == Action::C).count() as f64 / 10.0;
        (rate - 0.1).max(0.0)
    }
}

/// Answers each defection that follows its own cooperation with a run of
/// defections one round longer than the previous run.
#[derive(Debug, Clone, Default)]
pub struct FirstByShubik {
    seen: usize,
    run_length: u32,
    remaining: u32,
    next: Option<Action>,
}

impl FirstByShubik {
    fn decide(&mut self, last: (Action, Action)) -> Action {
        if self.remaining > 0 {
            self.remaining -= 1;
            return Action::D;
        }
        match last {
            (Action::C, Action::D) => {
                self.run_length += 1;
                self.remaining = self.run_length - 1;
                Action::D
            }
            _ => Action::C,
        }
    }
}

impl Strategy for FirstByShubik {
    fn cooperation_probability(&mut self, history: &History) -> f64 {
        if history.len() < self.seen {
            *self = FirstByShubik::default();
        }
        if history.is_empty() {
            self.next = Some(Action::C);
        }
        while self.seen < history.len() {
            let last = history.turns()[self.seen];
            self.seen += 1;
            self.next = Some(self.decide(last));
        }
        match self.next {
            Some(Action::D) => 0.0,
            _ => 1.0,
        }
    }
}
