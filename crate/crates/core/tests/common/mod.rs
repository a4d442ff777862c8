#![allow(dead_code)]

use std::sync::Arc;

use streamix::{Fabric, FabricConfig, Info, Process, Stream};

pub fn fabric(n: usize, explicit: usize) -> Fabric {
    Fabric::new(n, FabricConfig::new().explicit_pool_size(explicit)).unwrap()
}

pub fn exclusive_stream(p: &Arc<Process>) -> Stream {
    Stream::create(p, &Info::new()).unwrap()
}

/// Reference matcher over a flat event log.
///
/// Messages and receives are kept in one list each, in the order they
/// became visible. A receive takes the first visible unmatched message it
/// accepts; a message takes the first pending receive that accepts it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefMsg {
    pub src: u32,
    pub tag: i32,
    pub id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefRecv {
    pub src: i32,
    pub tag: i32,
}

#[derive(Debug, Clone, Copy)]
pub enum RefEvent {
    Arrive(RefMsg),
    Post(RefRecv),
}

fn accepts(r: &RefRecv, m: &RefMsg) -> bool {
    (r.src < 0 || r.src as u32 == m.src) && (r.tag < 0 || r.tag == m.tag)
}

/// Returns, for each receive in post order, the id of the message it got.
pub fn reference_match(events: &[RefEvent]) -> Vec<Option<u32>> {
    let mut msgs: Vec<(RefMsg, bool)> = Vec::new();
    let mut recvs: Vec<(RefRecv, Option<u32>)> = Vec::new();
    for ev in events {
        match *ev {
            RefEvent::Arrive(m) => {
                let taker = recvs
                    .iter_mut()
                    .find(|(r, got)| got.is_none() && accepts(r, &m));
                match taker {
                    Some((_, got)) => {
                        *got = Some(m.id);
                        msgs.push((m, true));
                    }
                    None => msgs.push((m, false)),
                }
            }
            RefEvent::Post(r) => {
                let hit = msgs.iter_mut().find(|(m, used)| !*used && accepts(&r, m));
                let got = hit.map(|(m, used)| {
                    *used = true;
                    m.id
                });
                recvs.push((r, got));
            }
        }
    }
    recvs.into_iter().map(|(_, got)| got).collect()
}

/// All orderings of `0..n`, lexicographic.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(rest: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(cur.clone());
            return;
        }
        for i in 0..rest.len() {
            let x = rest.remove(i);
            cur.push(x);
            go(rest, cur, out);
            cur.pop();
            rest.insert(i, x);
        }
    }
    let mut out = Vec::new();
    go(&mut (0..n).collect(), &mut Vec::new(), &mut out);
    out
}
