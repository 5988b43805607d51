use serde::{Deserialize, Serialize};

use crate::game::{Action, MatchRecord, Side};

use super::MetricsError;

/// Raw event counts for one player over a set of games.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorEvents {
    pub games: u64,
    pub first_moves_cooperative: u64,
    /// All opponent defections, including ones in a game's final round.
    pub opponent_defections: u64,
    /// Opponent defections followed by another round (the player could answer).
    pub answerable_opponent_defections: u64,
    pub forgiven_defections: u64,
    pub retaliations: u64,
    pub own_moves: u64,
    pub own_cooperations: u64,
    /// Mutual defections followed by another round.
    pub mutual_defections: u64,
    pub mutual_defections_followed_by_own_c: u64,
    /// D played after an opponent C (or on round 1).
    pub uncalled_defections: u64,
    /// Games where the player cooperated at least as often as the opponent.
    pub good_partner_games: u64,
}

impl BehaviorEvents {
    pub fn merge(&mut self, other: &BehaviorEvents) {
        self.games += other.games;
        self.first_moves_cooperative += other.first_moves_cooperative;
        self.opponent_defections += other.opponent_defections;
        self.answerable_opponent_defections += other.answerable_opponent_defections;
        self.forgiven_defections += other.forgiven_defections;
        self.retaliations += other.retaliations;
        self.own_moves += other.own_moves;
        self.own_cooperations += other.own_cooperations;
        self.mutual_defections += other.mutual_defections;
        self.mutual_defections_followed_by_own_c += other.mutual_defections_followed_by_own_c;
        self.uncalled_defections += other.uncalled_defections;
        self.good_partner_games += other.good_partner_games;
    }
}

/// Counts events in one game from `(own, opponent)` action pairs.
pub fn scan_game(turns: &[(Action, Action)]) -> BehaviorEvents {
    let mut ev = BehaviorEvents {
        games: 1,
        ..Default::default()
    };
    if let Some(&(first, _)) = turns.first() {
        if first == Action::C {
            ev.first_moves_cooperative = 1;
        }
    }
    let mut own_c = 0u64;
    let mut opp_c = 0u64;
    for (t, &(own, opp)) in turns.iter().enumerate() {
        ev.own_moves += 1;
        if own == Action::C {
            own_c += 1;
        }
        if opp == Action::C {
            opp_c += 1;
        }
        let prev_opp = if t == 0 { Action::C } else { turns[t - 1].1 };
        if own == Action::D && prev_opp == Action::C {
            ev.uncalled_defections += 1;
        }
        if opp == Action::D {
            ev.opponent_defections += 1;
        }
        let Some(&(next_own, _)) = turns.get(t + 1) else {
            continue;
        };
        if opp == Action::D {
            ev.answerable_opponent_defections += 1;
            match next_own {
                Action::C => ev.forgiven_defections += 1,
                Action::D => ev.retaliations += 1,
            }
            if own == Action::D {
                ev.mutual_defections += 1;
                if next_own == Action::C {
                    ev.mutual_defections_followed_by_own_c += 1;
                }
            }
        }
    }
    ev.own_cooperations = own_c;
    if own_c >= opp_c {
        ev.good_partner_games = 1;
    }
    ev
}

/// Sides of `record` played by `player_id`; both for self-play.
pub(crate) fn sides_of(record: &MatchRecord, player_id: &str) -> Vec<Side> {
    let mut sides = Vec::with_capacity(2);
    if record.player_a_id == player_id {
        sides.push(Side::A);
    }
    if record.player_b_id == player_id {
        sides.push(Side::B);
    }
    sides
}

pub(crate) fn turns_for(record: &MatchRecord, side: Side) -> Vec<(Action, Action)> {
    record
        .rounds
        .iter()
        .map(|r| match side {
            Side::A => (r.action_a, r.action_b),
            Side::B => (r.action_b, r.action_a),
        })
        .collect()
}

/// Event counts for `player_id` over every record. A self-play record
/// counts once per side.
pub fn extract_events(records: &[MatchRecord], player_id: &str) -> Result<BehaviorEvents, MetricsError> {
    let mut total = BehaviorEvents::default();
    for record in records {
        let sides = sides_of(record, player_id);
        if sides.is_empty() {
            return Err(MetricsError::UnknownPlayer(player_id.to_string()));
        }
        for side in sides {
            total.merge(&scan_game(&turns_for(record, side)));
        }
    }
    Ok(total)
}

/// Fraction of games in which the player cooperated at least as often as
/// its partner (ties count).
pub fn good_partner(records: &[MatchRecord], player_id: &str) -> Result<f64, MetricsError> {
    let ev = extract_events(records, player_id)?;
    if ev.games == 0 {
        return Err(MetricsError::InsufficientData("no games".into()));
    }
    Ok(ev.good_partner_games as f64 / ev.games as f64)
}
