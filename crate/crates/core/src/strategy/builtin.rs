use crate::game::Action;

use super::{History, Strategy};

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysCooperate;

impl Strategy for AlwaysCooperate {
    fn cooperation_probability(&mut self, _: &History) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysDefect;

impl Strategy for AlwaysDefect {
    fn cooperation_probability(&mut self, _: &History) -> f64 {
        0.0
    }
}

/// Cooperates until the opponent's first defection, then defects forever.
#[derive(Debug, Clone, Default)]
pub struct Grim {
    triggered: bool,
    seen: usize,
}

impl Strategy for Grim {
    fn cooperation_probability(&mut self, history: &History) -> f64 {
        if history.len() < self.seen {
            *self = Grim::default();
        }
        self.triggered |= history.turns()[self.seen..]
            .iter()
            .any(|&(_, opp)| opp == Action::D);
        self.seen = history.len();
        if self.triggered {
            0.0
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TitForTat;

impl Strategy for TitForTat {
    fn cooperation_probability(&mut self, history: &History) -> f64 {
        match history.last() {
            None | Some((_, Action::C)) => 1.0,
            Some((_, Action::D)) => 0.0,
        }
    }
}

/// Tit-for-tat that opens with a defection.
#[derive(Debug, Clone, Copy, Default)]
pub struct SuspiciousTitForTat;

impl Strategy for SuspiciousTitForTat {
    fn cooperation_probability(&mut self, history: &History) -> f64 {
        match history.last() {
            None | Some((_, Action::D)) => 0.0,
            Some((_, Action::C)) => 1.0,
        }
    }
}

/// Copies the opponent's move from two rounds back; cooperates on rounds 1-2.
#[derive(Debug, Clone, Copy, Default)]
pub struct TwoStepCopy;

impl Strategy for TwoStepCopy {
    fn cooperation_probability(&mut self, history: &History) -> f64 {
        let n = history.len();
        if n < 2 {
            return 1.0;
        }
        match history.turns()[n - 2].1 {
            Action::C => 1.0,
            Action::D => 0.0,
        }
    }
}

/// Tit-for-tat that answers a defection with a defection only with
/// probability `p`.
#[derive(Debug, Clone, Copy)]
pub struct GenerousTitForTat {
    defect_probability: f64,
}

impl GenerousTitForTat {
    pub const DEFAULT_P: f64 = 0.9;

    /// No range check; catalog construction enforces `0 <= p < 1`.
    pub fn new(defect_probability: f64) -> Self {
        GenerousTitForTat { defect_probability }
    }
}

impl Strategy for GenerousTitForTat {
    fn cooperation_probability(&mut self, history: &History) -> f64 {
        match history.last() {
            None | Some((_, Action::C)) => 1.0,
            Some((_, Action::D)) => 1.0 - self.defect_probability,
        }
    }
}

/// Pavlov: repeat the last action after a round where the opponent
/// cooperated (own payoff R or H), switch otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct WinStayLoseShift;

impl Strategy for WinStayLoseShift {
    fn cooperation_probability(&mut self, history: &History) -> f64 {
        let next = match history.last() {
            None => Action::C,
            Some((own, Action::C)) => own,
            Some((own, Action::D)) => own.flip(),
        };
        if next == Action::C {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RandomStrategy {
    p_coop: f64,
}

impl RandomStrategy {
    pub const DEFAULT_P: f64 = 0.5;

    pub fn new(p_coop: f64) -> Self {
        RandomStrategy { p_coop }
    }
}

impl Strategy for RandomStrategy {
    fn cooperation_probability(&mut self, _: &History) -> f64 {
        self.p_coop
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Action::{C, D};

    fn h(pairs: &[(Action, Action)]) -> History {
        History::from_pairs(pairs.iter().copied())
    }

    #[test]
    fn tit_for_tat_opens_cooperatively() {
        assert_eq!(TitForTat.cooperation_probability(&h(&[])), 1.0);
        assert_eq!(TitForTat.cooperation_probability(&h(&[(C, D)])), 0.0);
        assert_eq!(TitForTat.cooperation_probability(&h(&[(C, D), (D, C)])), 1.0);
    }

    #[test]
    fn grim_never_forgives() {
        let mut g = Grim::default();
        assert_eq!(g.cooperation_probability(&h(&[(C, C), (C, D), (C, C)])), 0.0);
        let mut g = Grim::default();
        assert_eq!(g.cooperation_probability(&h(&[(C, C)])), 1.0);
        assert_eq!(g.cooperation_probability(&h(&[(C, C), (C, D)])), 0.0);
        assert_eq!(g.cooperation_probability(&h(&[(C, C), (C, D), (D, C)])), 0.0);
        // a shorter history means a new game
        assert_eq!(g.cooperation_probability(&h(&[])), 1.0);
    }

    #[test]
    fn two_step_copy_looks_two_back() {
        let mut s = TwoStepCopy;
        assert_eq!(s.cooperation_probability(&h(&[])), 1.0);
        assert_eq!(s.cooperation_probability(&h(&[(C, D)])), 1.0);
        assert_eq!(s.cooperation_probability(&h(&[(C, D), (C, C)])), 0.0);
        assert_eq!(s.cooperation_probability(&h(&[(C, C), (C, D)])), 1.0);
    }

    #[test]
    fn generous_forgives_with_complement() {
        let mut s = GenerousTitForTat::new(0.9);
        assert_eq!(s.cooperation_probability(&h(&[])), 1.0);
        assert!((s.cooperation_probability(&h(&[(C, D)])) - 0.1).abs() < 1e-12);
        assert_eq!(s.cooperation_probability(&h(&[(C, C)])), 1.0);
    }

    #[test]
    fn pavlov_stays_after_temptation() {
        let mut s = WinStayLoseShift;
        assert_eq!(s.cooperation_probability(&h(&[])), 1.0);
        assert_eq!(s.cooperation_probability(&h(&[(D, C)])), 0.0);
        assert_eq!(s.cooperation_probability(&h(&[(C, C)])), 1.0);
        assert_eq!(s.cooperation_probability(&h(&[(C, D)])), 0.0);
        assert_eq!(s.cooperation_probability(&h(&[(D, D)])), 1.0);
    }

    #[test]
    fn suspicious_opens_with_defection() {
        let mut s = SuspiciousTitForTat;
        assert_eq!(s.cooperation_probability(&h(&[])), 0.0);
        assert_eq!(s.cooperation_probability(&h(&[(D, C)])), 1.0);
    }
}
