use std::collections::BTreeMap;

use super::types::{Batch, ConsensusMsg, MsgBody, PreparedEntry, ReplicaId};

/// How far behind the most advanced replica a new view re-proposes.
pub const VIEW_CHANGE_LOG: u64 = 64;

/// Proposals a new primary must issue, derived from a set of view-change
/// messages: for every sequence number from the lowest unexecuted one (but no
/// further back than [`VIEW_CHANGE_LOG`]) to the highest reported, the batch
/// reported in the highest view, or a null batch.
pub fn compute_proposals(view_changes: &[ConsensusMsg]) -> Vec<(u64, Batch)> {
    let mut lasts = Vec::new();
    let mut best: BTreeMap<u64, (u64, ReplicaId, &Batch)> = BTreeMap::new();
    for vc in view_changes {
        let MsgBody::ViewChange {
            last_exec,
            prepared,
            ..
        } = &vc.body
        else {
            continue;
        };
        lasts.push(*last_exec);
        for PreparedEntry { seq, view, batch } in prepared {
            let candidate = (*view, vc.sender, batch);
            match best.get(seq) {
                Some((v, s, _)) if (*v, std::cmp::Reverse(*s)) >= (*view, std::cmp::Reverse(vc.sender)) => {}
                _ => {
                    best.insert(*seq, candidate);
                }
            }
        }
    }
    let (Some(&min_last), Some(&max_last)) = (lasts.iter().min(), lasts.iter().max()) else {
        return Vec::new();
    };
    let max_seq = best.keys().next_back().copied().unwrap_or(0).max(max_last);
    let start = (min_last + 1).max((max_last + 1).saturating_sub(VIEW_CHANGE_LOG)).max(1);
    (start..=max_seq)
        .map(|s| {
            let batch = best.get(&s).map_or_else(Batch::null, |(_, _, b)| (*b).clone());
            (s, batch)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::Micros;

    fn vc(sender: u32, last_exec: u64, prepared: Vec<(u64, u64, i64)>) -> ConsensusMsg {
        ConsensusMsg {
            sender: ReplicaId(sender),
            sent_at: Micros(0),
            body: MsgBody::ViewChange {
                new_view: 1,
                last_exec,
                prepared: prepared
                    .into_iter()
                    .map(|(seq, view, at)| PreparedEntry {
                        seq,
                        view,
                        batch: Batch {
                            proposed_at: Micros(at),
                            requests: vec![],
                        },
                    })
                    .collect(),
            },
            signature: vec![],
        }
    }

    #[test]
    fn highest_view_wins_and_gaps_are_null() {
        let props = compute_proposals(&[
            vc(0, 2, vec![(3, 0, 30), (5, 0, 50)]),
            vc(1, 1, vec![(2, 0, 20), (3, 1, 31)]),
            vc(2, 2, vec![]),
        ]);
        let seqs: Vec<u64> = props.iter().map(|(s, _)| *s).collect();
        assert_eq!(seqs, vec![2, 3, 4, 5]);
        assert_eq!(props[0].1.proposed_at, Micros(20));
        assert_eq!(props[1].1.proposed_at, Micros(31));
        assert!(props[2].1.is_null() && props[2].1.proposed_at == Micros(0));
        assert_eq!(props[3].1.proposed_at, Micros(50));
    }

    #[test]
    fn nothing_to_redo() {
        assert!(compute_proposals(&[vc(0, 4, vec![]), vc(1, 4, vec![])]).is_empty());
        assert!(compute_proposals(&[]).is_empty());
    }

    #[test]
    fn log_bound_limits_replay() {
        let props = compute_proposals(&[vc(0, 0, vec![]), vc(1, 100, vec![])]);
        assert_eq!(props.first().unwrap().0, 100 - VIEW_CHANGE_LOG + 1);
        assert_eq!(props.last().unwrap().0, 100);
    }
}
