//! Exhaustive matching-order check.
//!
//! A program is a list of sends arriving at one receiving rank (each from
//! that rank itself or its peer, tag 0 or 1) and a list of receives posted
//! there (source self/peer/any, tag 0/1/any). Matching at the receiver is
//! decided by the order in which messages become visible relative to
//! receive posts, so every merge of the two lists is a distinct schedule.
//! Each schedule runs on a fresh two-rank fabric in both directions at once
//! (rank 1 receives the program, rank 0 receives its mirror image) and the
//! pairing is compared with a single-queue reference.

use std::fmt;

use streamix::{Communicator, Fabric, FabricConfig, ANY_SOURCE, ANY_TAG};

/// Upper bound on `max_ops`: programs hold at most three sends and three
/// receives per receiving rank.
pub const MAX_ORACLE_OPS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Send {
    /// Sender relative to the receiver: 0 = itself, 1 = its peer.
    from_peer: bool,
    tag: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Recv {
    /// `None` is a wildcard; `Some(true)` names the peer.
    from_peer: Option<bool>,
    tag: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Arrive(usize),
    Post(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub receiver: u32,
    pub schedule: String,
    /// Send index each receive matched, in post order.
    pub expected: Vec<Option<usize>>,
    pub observed: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub max_ops: usize,
    pub programs: u64,
    pub schedules: u64,
    pub divergences: Vec<Divergence>,
}

impl OracleReport {
    pub fn is_clean(&self) -> bool {
        self.divergences.is_empty()
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "max_ops={} programs={} schedules={} divergences={}",
            self.max_ops,
            self.programs,
            self.schedules,
            self.divergences.len()
        )?;
        for d in self.divergences.iter().take(10) {
            writeln!(
                f,
                "  rank {} {}: expected {:?}, observed {:?}",
                d.receiver, d.schedule, d.expected, d.observed
            )?;
        }
        Ok(())
    }
}

/// The reference: one list of visible-but-unmatched messages, one list of
/// unsatisfied receives, both kept in the order they appeared.
fn reference(sends: &[Send], recvs: &[Recv], schedule: &[Step]) -> Vec<Option<usize>> {
    let accepts = |r: &Recv, s: &Send| {
        r.from_peer.is_none_or(|p| p == s.from_peer) && r.tag.is_none_or(|t| t == s.tag)
    };
    let mut out = vec![None; recvs.len()];
    let mut visible: Vec<usize> = Vec::new();
    let mut waiting: Vec<usize> = Vec::new();
    for step in schedule {
        match *step {
            Step::Arrive(m) => match waiting.iter().position(|&r| accepts(&recvs[r], &sends[m])) {
                Some(i) => out[waiting.remove(i)] = Some(m),
                None => visible.push(m),
            },
            Step::Post(r) => match visible.iter().position(|&m| accepts(&recvs[r], &sends[m])) {
                Some(i) => out[r] = Some(visible.remove(i)),
                None => waiting.push(r),
            },
        }
    }
    out
}

fn all_sends(n: usize) -> Vec<Vec<Send>> {
    let choices: Vec<Send> = [false, true]
        .into_iter()
        .flat_map(|from_peer| (0..2).map(move |tag| Send { from_peer, tag }))
        .collect();
    product(&choices, n)
}

fn all_recvs(n: usize) -> Vec<Vec<Recv>> {
    let choices: Vec<Recv> = [None, Some(false), Some(true)]
        .into_iter()
        .flat_map(|from_peer| {
            [None, Some(0), Some(1)]
                .into_iter()
                .map(move |tag| Recv { from_peer, tag })
        })
        .collect();
    product(&choices, n)
}

fn product<T: Copy>(choices: &[T], n: usize) -> Vec<Vec<T>> {
    (0..n).fold(vec![Vec::new()], |acc, _| {
        acc.iter()
            .flat_map(|prefix| {
                choices
                    .iter()
                    .map(move |&c| [prefix.as_slice(), &[c]].concat())
            })
            .collect()
    })
}

/// Every order-preserving merge of `s` arrivals with `r` posts.
fn merges(s: usize, r: usize) -> Vec<Vec<Step>> {
    fn go(a: usize, p: usize, s: usize, r: usize, cur: &mut Vec<Step>, out: &mut Vec<Vec<Step>>) {
        if a == s && p == r {
            out.push(cur.clone());
            return;
        }
        if a < s {
            cur.push(Step::Arrive(a));
            go(a + 1, p, s, r, cur, out);
            cur.pop();
        }
        if p < r {
            cur.push(Step::Post(p));
            go(a, p + 1, s, r, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, 0, s, r, &mut Vec::new(), &mut out);
    out
}

fn describe(sends: &[Send], recvs: &[Recv], schedule: &[Step]) -> String {
    let step = |s: &Step| match *s {
        Step::Arrive(m) => {
            let x = sends[m];
            format!(
                "arrive#{m}({},{})",
                if x.from_peer { "peer" } else { "self" },
                x.tag
            )
        }
        Step::Post(r) => {
            let x = recvs[r];
            let src = match x.from_peer {
                None => "any".to_string(),
                Some(true) => "peer".into(),
                Some(false) => "self".into(),
            };
            let tag = x.tag.map_or("any".to_string(), |t| t.to_string());
            format!("post#{r}({src},{tag})")
        }
    };
    schedule.iter().map(step).collect::<Vec<_>>().join(" ")
}

/// Replays one schedule on a fresh fabric. Receiver `rx` sees the program
/// as written; the other rank sees the same program with ranks swapped.
fn replay(sends: &[Send], recvs: &[Recv], schedule: &[Step]) -> [Vec<Option<usize>>; 2] {
    let fabric = Fabric::new(
        2,
        FabricConfig::new()
            .implicit_pool_size(1)
            .explicit_pool_size(0),
    )
    .expect("oracle fabric");
    let comms: Vec<Communicator> = fabric.processes().iter().map(|p| p.world()).collect();
    let mut reqs: [Vec<_>; 2] = [Vec::new(), Vec::new()];
    for step in schedule {
        for rx in 0..2u32 {
            let peer = 1 - rx;
            match *step {
                Step::Arrive(m) => {
                    let s = sends[m];
                    let from = if s.from_peer { peer } else { rx };
                    comms[from as usize]
                        .isend(&[m as u8], rx as i32, s.tag)
                        .expect("oracle send");
                    fabric
                        .process(rx as usize)
                        .progress_poll(&[comms[rx as usize].recv_endpoint(0)]);
                }
                Step::Post(r) => {
                    let x = recvs[r];
                    let src = match x.from_peer {
                        None => ANY_SOURCE,
                        Some(true) => peer as i32,
                        Some(false) => rx as i32,
                    };
                    let req = comms[rx as usize]
                        .irecv::<u8>(1, src, x.tag.unwrap_or(ANY_TAG))
                        .expect("oracle receive");
                    reqs[rx as usize].push(req);
                }
            }
        }
    }
    reqs.map(|rs| {
        rs.into_iter()
            .map(|mut r| {
                r.is_complete()
                    .then(|| r.take_bytes().expect("payload")[0] as usize)
            })
            .collect()
    })
}

/// Enumerates every program with up to `ceil(max_ops / 2)` sends and
/// receives (at most `max_ops` in total) and every schedule of each, and
/// reports pairings that differ from the reference.
///
/// # Panics
/// If `max_ops` exceeds [`MAX_ORACLE_OPS`].
pub fn run_interleaving_oracle(max_ops: usize) -> OracleReport {
    assert!(
        max_ops <= MAX_ORACLE_OPS,
        "max_ops must be at most {MAX_ORACLE_OPS}"
    );
    let half = max_ops.div_ceil(2);
    let mut report = OracleReport {
        max_ops,
        ..Default::default()
    };
    for s in 0..=half {
        for r in 0..=half {
            if s + r > max_ops || s + r == 0 {
                continue;
            }
            let schedules = merges(s, r);
            let recv_programs = all_recvs(r);
            for sends in all_sends(s) {
                for recvs in &recv_programs {
                    report.programs += 1;
                    for schedule in &schedules {
                        report.schedules += 1;
                        let expected = reference(&sends, recvs, schedule);
                        let observed = replay(&sends, recvs, schedule);
                        for (rank, got) in observed.into_iter().enumerate() {
                            if got != expected {
                                report.divergences.push(Divergence {
                                    receiver: rank as u32,
                                    schedule: describe(&sends, recvs, schedule),
                                    expected: expected.clone(),
                                    observed: got,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ops_is_empty() {
        let r = run_interleaving_oracle(0);
        assert_eq!((r.programs, r.schedules), (0, 0));
        assert!(r.is_clean());
    }

    #[test]
    fn merge_counts_are_binomial() {
        assert_eq!(merges(3, 3).len(), 20);
        assert_eq!(merges(2, 0).len(), 1);
        assert_eq!(merges(1, 4).len(), 5);
    }

    #[test]
    fn same_signature_pairs_in_send_order() {
        let sends = [Send {
            from_peer: true,
            tag: 0,
        }; 2];
        let recvs = [Recv {
            from_peer: Some(true),
            tag: Some(0),
        }; 2];
        for schedule in merges(2, 2) {
            assert_eq!(reference(&sends, &recvs, &schedule), vec![Some(0), Some(1)]);
            assert_eq!(
                replay(&sends, &recvs, &schedule),
                [vec![Some(0), Some(1)], vec![Some(0), Some(1)]]
            );
        }
    }

    #[test]
    fn distinct_tags_any_tag_receives() {
        let sends: Vec<Send> = (0..3)
            .map(|tag| Send {
                from_peer: true,
                tag: tag % 2,
            })
            .collect();
        let recvs = [Recv {
            from_peer: None,
            tag: None,
        }; 3];
        for schedule in merges(3, 3) {
            let want = reference(&sends, &recvs, &schedule);
            assert_eq!(want, vec![Some(0), Some(1), Some(2)]);
            assert_eq!(replay(&sends, &recvs, &schedule), [want.clone(), want]);
        }
    }

    #[test]
    fn reference_hand_cases() {
        let a = Send {
            from_peer: true,
            tag: 1,
        };
        let b = Send {
            from_peer: false,
            tag: 0,
        };
        let any = Recv {
            from_peer: None,
            tag: None,
        };
        let tag0 = Recv {
            from_peer: None,
            tag: Some(0),
        };
        // tag-0 receive skips the earlier tag-1 message
        let got = reference(
            &[a, b],
            &[tag0, any],
            &[
                Step::Arrive(0),
                Step::Arrive(1),
                Step::Post(0),
                Step::Post(1),
            ],
        );
        assert_eq!(got, vec![Some(1), Some(0)]);
        // posted receives are satisfied in post order
        let got = reference(
            &[a],
            &[any, any],
            &[Step::Post(0), Step::Post(1), Step::Arrive(0)],
        );
        assert_eq!(got, vec![Some(0), None]);
    }

    #[test]
    fn small_bound_is_clean() {
        let r = run_interleaving_oracle(3);
        assert!(r.is_clean(), "{r}");
        assert!(r.schedules > 0);
    }
}
