//! Per-user chronological sequences and the leave-one-out split.

use super::{Domain, MixedEvent, Preprocessed, SeqEvent, UserSequenceBundle};

/// Build one [`UserSequenceBundle`] per user with at least 3 target events
/// (fewer cannot form a train/valid/test split and are excluded; the second
/// return value counts them).
///
/// Per-domain sequences are stably sorted by timestamp; the mixed sequence is
/// their stable merge with source events preceding target events on ties.
pub fn build_sequences(pre: &Preprocessed) -> (Vec<UserSequenceBundle>, usize) {
    let num_users = pre.maps.num_users();
    let mut per_user_source: Vec<Vec<SeqEvent>> = vec![Vec::new(); num_users];
    let mut per_user_target: Vec<Vec<SeqEvent>> = vec![Vec::new(); num_users];

    for r in pre.source_records.iter().chain(&pre.target_records) {
        let user = pre.maps.user_index(&r.user_id).expect("retained user is indexed");
        let local = pre.maps.item_index(r.domain, &r.item_id).expect("retained item is indexed");
        let item = pre.maps.unified(r.domain, local);
        let event = SeqEvent { item, timestamp: r.timestamp };
        match r.domain {
            Domain::Source => per_user_source[user].push(event),
            Domain::Target => per_user_target[user].push(event),
        }
    }

    let mut bundles = Vec::new();
    let mut excluded = 0usize;
    for user in 0..num_users {
        let mut source = std::mem::take(&mut per_user_source[user]);
        let mut target = std::mem::take(&mut per_user_target[user]);
        source.sort_by_key(|e| e.timestamp); // stable: input order kept on ties
        target.sort_by_key(|e| e.timestamp);
        if target.len() < 3 {
            excluded += 1;
            continue;
        }
        let mixed = merge_stable(&source, &target);
        bundles.push(UserSequenceBundle { user, source, target, mixed });
    }
    (bundles, excluded)
}

pub(crate) fn merge_stable(source: &[SeqEvent], target: &[SeqEvent]) -> Vec<MixedEvent> {
    let mut mixed = Vec::with_capacity(source.len() + target.len());
    let (mut i, mut j) = (0usize, 0usize);
    while i < source.len() || j < target.len() {
        let take_source = match (source.get(i), target.get(j)) {
            (Some(s), Some(t)) => s.timestamp <= t.timestamp,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if take_source {
            mixed.push(MixedEvent { item: source[i].item, domain: Domain::Source, domain_pos: i });
            i += 1;
        } else {
            mixed.push(MixedEvent { item: target[j].item, domain: Domain::Target, domain_pos: j });
            j += 1;
        }
    }
    mixed
}

/// View of a bundle's target sequence split per the leave-one-out protocol:
/// last event is the test item, second-to-last the validation item, the rest
/// is training history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitView<'a> {
    pub train: &'a [SeqEvent],
    pub valid: usize,
    pub test: usize,
}

pub fn split_leave_one_out(bundle: &UserSequenceBundle) -> SplitView<'_> {
    let n = bundle.target.len();
    assert!(n >= 3, "split requires at least 3 target events");
    SplitView {
        train: &bundle.target[..n - 2],
        valid: bundle.target[n - 2].item,
        test: bundle.target[n - 1].item,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{preprocess, InteractionRecord};

    fn rec(user: &str, item: &str, domain: Domain, ts: i64) -> InteractionRecord {
        InteractionRecord { user_id: user.into(), item_id: item.into(), domain, timestamp: ts }
    }

    fn single_user_pre(source_ts: &[i64], target_ts: &[i64]) -> Preprocessed {
        let source: Vec<_> =
            source_ts.iter().enumerate().map(|(i, &t)| rec("u", &format!("s{i}"), Domain::Source, t)).collect();
        let target: Vec<_> =
            target_ts.iter().enumerate().map(|(i, &t)| rec("u", &format!("t{i}"), Domain::Target, t)).collect();
        preprocess(source, target, 1, 1).unwrap()
    }

    #[test]
    fn mixed_is_timestamp_merge() {
        let pre = single_user_pre(&[2, 4], &[1, 3, 5]);
        let (bundles, excluded) = build_sequences(&pre);
        assert_eq!(excluded, 0);
        let order: Vec<Domain> = bundles[0].mixed.iter().map(|e| e.domain).collect();
        assert_eq!(
            order,
            vec![Domain::Target, Domain::Source, Domain::Target, Domain::Source, Domain::Target]
        );
        assert_eq!(bundles[0].mixed.len(), bundles[0].n_source() + bundles[0].n_target());
    }

    /// Oracle: brute-force stable sort over (timestamp, domain rank, input pos).
    #[test]
    fn ties_put_source_before_target() {
        let pre = single_user_pre(&[5, 5, 7], &[5, 7, 9]);
        let (bundles, _) = build_sequences(&pre);
        let got: Vec<(i64, Domain)> = bundles[0]
            .mixed
            .iter()
            .map(|e| {
                let ev = match e.domain {
                    Domain::Source => bundles[0].source[e.domain_pos],
                    Domain::Target => bundles[0].target[e.domain_pos],
                };
                (ev.timestamp, e.domain)
            })
            .collect();

        let mut oracle: Vec<(i64, Domain, usize)> = Vec::new();
        for (p, e) in bundles[0].source.iter().enumerate() {
            oracle.push((e.timestamp, Domain::Source, p));
        }
        for (p, e) in bundles[0].target.iter().enumerate() {
            oracle.push((e.timestamp, Domain::Target, p));
        }
        oracle.sort_by_key(|&(t, d, p)| (t, d, p)); // Source < Target in enum order
        let expect: Vec<(i64, Domain)> = oracle.into_iter().map(|(t, d, _)| (t, d)).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn too_short_target_history_is_excluded() {
        let pre = single_user_pre(&[1, 2, 3], &[1, 2]);
        let (bundles, excluded) = build_sequences(&pre);
        assert!(bundles.is_empty());
        assert_eq!(excluded, 1);
    }

    #[test]
    fn split_positions() {
        let pre = single_user_pre(&[1], &[10, 20, 30, 40]);
        let (bundles, _) = build_sequences(&pre);
        let split = split_leave_one_out(&bundles[0]);
        assert_eq!(split.train.len(), 2);
        assert_eq!(split.train[0].item, bundles[0].target[0].item);
        assert_eq!(split.valid, bundles[0].target[2].item);
        assert_eq!(split.test, bundles[0].target[3].item);

        let pre = single_user_pre(&[1], &[10, 20, 30]);
        let (bundles, _) = build_sequences(&pre);
        let split = split_leave_one_out(&bundles[0]);
        assert_eq!(split.train.len(), 1);
    }

    #[test]
    fn test_and_valid_never_in_training_positions() {
        let pre = single_user_pre(&[1, 2], &[5, 6, 7, 8, 9]);
        let (bundles, _) = build_sequences(&pre);
        let split = split_leave_one_out(&bundles[0]);
        assert!(!split.train.iter().any(|e| e.item == split.valid || e.item == split.test));
    }
}
