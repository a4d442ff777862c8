mod common;

use common::{exclusive_stream, fabric, reference_match, RefEvent, RefMsg, RefRecv};
use proptest::prelude::*;
use streamix::{
    waitall, Communicator, Error, Fabric, FabricConfig, ImplicitPolicy, Info, Stream, ANY_INDEX,
    ANY_SOURCE, ANY_TAG, STREAM_NULL,
};

fn worlds(f: &Fabric) -> Vec<Communicator> {
    f.processes().iter().map(|p| p.world()).collect()
}

#[test]
fn thread_per_stream_comm_pattern() {
    const NT: usize = 4;
    let f = fabric(2, NT);
    f.run(|p| {
        let world = p.world();
        let streams: Vec<Stream> = (0..NT).map(|_| exclusive_stream(&p)).collect();
        let comms: Vec<_> = streams
            .iter()
            .map(|s| world.stream_comm_create(s).unwrap())
            .collect();
        std::thread::scope(|s| {
            for (id, comm) in comms.iter().enumerate() {
                let rank = p.rank();
                s.spawn(move || {
                    let buf: Vec<u8> = (0..100).map(|i| (i + id) as u8).collect();
                    if rank == 0 {
                        comm.send(&buf, 1, 0).unwrap();
                    } else {
                        let (got, st) = comm.recv::<u8>(100, 0, 0).unwrap();
                        assert_eq!(got, buf);
                        assert_eq!(st.len, 100);
                    }
                });
            }
        });
        for (c, s) in comms.iter().zip(&streams) {
            c.free().unwrap();
            s.free().unwrap();
        }
        assert_eq!(p.explicit_endpoints_held(), 0);
    });
}

#[test]
fn zero_count_self_send() {
    let f = fabric(1, 0);
    let world = f.process(0).world();
    let mut r = world.irecv::<i32>(4, 0, 3).unwrap();
    world.send::<i32>(&[], 0, 3).unwrap();
    let st = r.wait().unwrap();
    assert_eq!(st.len, 0);
    assert!(!st.truncated);
}

#[test]
fn same_signature_sends_pair_in_issue_order() {
    let f = fabric(2, 0);
    let w = worlds(&f);
    w[0].isend(&[1u8], 1, 5).unwrap();
    w[0].isend(&[2u8], 1, 5).unwrap();
    let mut reqs = vec![
        w[1].irecv::<u8>(1, 0, 5).unwrap(),
        w[1].irecv::<u8>(1, 0, 5).unwrap(),
    ];
    waitall(&mut reqs).unwrap();
    let got: Vec<u8> = reqs
        .iter_mut()
        .map(|r| r.take_data::<u8>().unwrap()[0])
        .collect();
    let oracle = reference_match(&[
        RefEvent::Arrive(RefMsg {
            src: 0,
            tag: 5,
            id: 1,
        }),
        RefEvent::Arrive(RefMsg {
            src: 0,
            tag: 5,
            id: 2,
        }),
        RefEvent::Post(RefRecv { src: 0, tag: 5 }),
        RefEvent::Post(RefRecv { src: 0, tag: 5 }),
    ]);
    assert_eq!(got, vec![1, 2]);
    assert_eq!(oracle, vec![Some(1), Some(2)]);
}

#[test]
fn posted_and_unexpected_paths_agree() {
    let f = fabric(2, 0);
    let w = worlds(&f);
    let mut early = w[1].irecv::<f64>(2, 0, 9).unwrap();
    w[0].send(&[1.5f64, 2.5], 1, 9).unwrap();
    let st_early = early.wait().unwrap();

    w[0].send(&[1.5f64, 2.5], 1, 9).unwrap();
    f.process(1).progress_poll(&[w[1].recv_endpoint(0)]);
    let (late_data, st_late) = w[1].recv::<f64>(2, 0, 9).unwrap();

    assert_eq!(st_early, st_late);
    assert_eq!(early.take_data::<f64>().unwrap(), late_data);
    let stats = f.process(1).endpoint(w[1].recv_endpoint(0)).stats();
    assert_eq!(stats.matched_posted, 1);
    assert_eq!(stats.matched_unexpected, 1);
}

#[test]
fn any_source_reports_actual_sender() {
    let f = fabric(3, 0);
    let w = worlds(&f);
    let mut r = w[0].irecv::<u8>(8, ANY_SOURCE, ANY_TAG).unwrap();
    w[2].send(&[7u8], 0, 11).unwrap();
    let st = r.wait().unwrap();
    assert_eq!((st.source, st.tag), (2, 11));
}

#[test]
fn communicators_match_independently() {
    let f = fabric(2, 0);
    let (a, b): (Vec<_>, Vec<_>) = f
        .run(|p| {
            let w = p.world();
            (w.dup().unwrap(), w.dup().unwrap())
        })
        .into_iter()
        .unzip();
    assert_ne!(a[0].context_id(), b[0].context_id());
    a[0].send(&[1u8], 1, 0).unwrap();
    b[0].send(&[2u8], 1, 0).unwrap();
    let (got_b, _) = b[1].recv::<u8>(1, 0, 0).unwrap();
    let (got_a, _) = a[1].recv::<u8>(1, 0, 0).unwrap();
    assert_eq!((got_a[0], got_b[0]), (1, 2));
}

#[test]
fn truncation_flagged_not_fatal() {
    let f = fabric(1, 0);
    let w = f.process(0).world();
    w.send(&[1i32, 2, 3], 0, 0).unwrap();
    let (got, st) = w.recv::<i32>(2, 0, 0).unwrap();
    assert!(st.truncated);
    assert_eq!(got, vec![1, 2]);
}

#[test]
fn wait_consumes_request() {
    let f = fabric(1, 0);
    let w = f.process(0).world();
    let mut s = w.isend(&[1u8], 0, 0).unwrap();
    assert!(s.is_complete());
    s.wait().unwrap();
    assert_eq!(s.wait(), Err(Error::InvalidRequest));
    let mut r = w.irecv::<u8>(1, 0, 0).unwrap();
    r.wait().unwrap();
    assert_eq!(waitall(&mut [r]), Err(Error::InvalidRequest));
}

#[test]
fn waitall_over_mixed_requests() {
    let f = fabric(2, 0);
    let sums = f.run(|p| {
        let w = p.world();
        let peer = 1 - p.rank() as i32;
        let mut reqs = Vec::new();
        for t in 0..4 {
            reqs.push(w.irecv::<i32>(1, peer, t).unwrap());
            reqs.push(w.isend(&[t + 10 * p.rank() as i32], peer, t).unwrap());
        }
        let statuses = waitall(&mut reqs).unwrap();
        assert_eq!(statuses.len(), 8);
        reqs.iter_mut()
            .step_by(2)
            .map(|r| r.take_data::<i32>().unwrap()[0])
            .sum::<i32>()
    });
    assert_eq!(
        sums,
        vec![(0..4).map(|t| t + 10).sum::<i32>(), (0..4).sum()]
    );
}

#[test]
fn wait_drives_only_issuing_endpoint() {
    let f = fabric(2, 2);
    let comms = f.run(|p| {
        let w = p.world();
        let (sa, sb) = (exclusive_stream(&p), exclusive_stream(&p));
        (
            w.stream_comm_create(&sa).unwrap(),
            w.stream_comm_create(&sb).unwrap(),
        )
    });
    let (a1, b1) = &comms[1];
    let (a0, b0) = &comms[0];
    let mut ra = a1.irecv::<u8>(1, 0, 0).unwrap();
    let mut rb = b1.irecv::<u8>(1, 0, 0).unwrap();
    b0.send(&[2u8], 1, 0).unwrap();
    a0.send(&[1u8], 1, 0).unwrap();
    ra.wait().unwrap();
    let eb = f.process(1).endpoint(b1.recv_endpoint(0)).clone();
    assert_ne!(eb.id(), a1.recv_endpoint(0));
    assert_eq!(eb.stats().polls, 0);
    assert!(!rb.is_complete());
    rb.wait().unwrap();
    assert_eq!(rb.take_data::<u8>().unwrap(), vec![2]);
}

#[test]
fn argument_errors() {
    let f = fabric(2, 0);
    let w = worlds(&f);
    assert_eq!(w[0].isend(&[0u8], 2, 0).unwrap_err(), Error::InvalidRank(2));
    assert_eq!(
        w[0].isend(&[0u8], ANY_SOURCE, 0).unwrap_err(),
        Error::InvalidRank(-1)
    );
    assert_eq!(
        w[0].irecv::<u8>(1, 5, 0).unwrap_err(),
        Error::InvalidRank(5)
    );
    assert_eq!(
        w[0].isend(&[0u8], 1, -3).unwrap_err(),
        Error::InvalidTag(-3)
    );
    assert_eq!(
        w[0].stream_isend(&[0u8], 1, 0, 0, 0).unwrap_err(),
        Error::NotMultiplex
    );
    assert_eq!(
        w[0].stream_irecv::<u8>(1, 1, 0, 0, 0).unwrap_err(),
        Error::NotMultiplex
    );
}

fn multiplex(f: &Fabric, counts: &[usize]) -> Vec<(Communicator, Vec<Stream>)> {
    f.run(|p| {
        let streams: Vec<Stream> = (0..counts[p.rank() as usize])
            .map(|_| exclusive_stream(&p))
            .collect();
        (
            p.world().stream_comm_create_multiple(&streams).unwrap(),
            streams,
        )
    })
}

#[test]
fn multiplex_rejects_conventional_calls_and_bad_indices() {
    let f = fabric(2, 4);
    let m = multiplex(&f, &[4, 1]);
    let c = &m[0].0;
    assert_eq!(c.isend(&[0u8], 1, 0).unwrap_err(), Error::MultiplexComm);
    assert_eq!(c.irecv::<u8>(1, 1, 0).unwrap_err(), Error::MultiplexComm);
    assert_eq!(
        c.stream_isend(&[0u8], 1, 0, 0, 1).unwrap_err(),
        Error::InvalidIndex(1)
    );
    assert_eq!(
        c.stream_isend(&[0u8], 1, 0, 4, 0).unwrap_err(),
        Error::InvalidIndex(4)
    );
    assert_eq!(
        c.stream_irecv::<u8>(1, 1, 0, 0, ANY_INDEX).unwrap_err(),
        Error::WildcardDst
    );
    assert_eq!(
        c.stream_irecv::<u8>(1, 1, 0, 0, 4).unwrap_err(),
        Error::InvalidIndex(4)
    );
    assert_eq!(
        c.stream_irecv::<u8>(1, 1, 0, 1, 0).unwrap_err(),
        Error::InvalidIndex(1)
    );
}

fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

#[test]
fn multiplex_all_to_all_sixteen_pairs() {
    let f = fabric(2, 4);
    let m = multiplex(&f, &[4, 4]);
    let payload = |src_rank: u32, s: i32, d: i32| -> Vec<u8> {
        (0..64)
            .map(|k| (k as u32 * 7 + src_rank * 31 + s as u32 * 5 + d as u32 * 3) as u8)
            .collect()
    };
    std::thread::scope(|scope| {
        for (rank, (comm, _)) in m.iter().enumerate() {
            let peer = 1 - rank as i32;
            for idx in 0..4i32 {
                scope.spawn(move || {
                    let mut reqs = Vec::new();
                    for s in 0..4 {
                        reqs.push(comm.stream_irecv::<u8>(64, peer, 0, s, idx).unwrap());
                    }
                    for d in 0..4 {
                        comm.stream_send(&payload(rank as u32, idx, d), peer, 0, idx, d)
                            .unwrap();
                    }
                    for (s, mut r) in reqs.into_iter().enumerate() {
                        let st = r.wait().unwrap();
                        assert_eq!(st.source_index, s as i32);
                        let got = r.take_bytes().unwrap();
                        assert_eq!(
                            checksum(&got),
                            checksum(&payload(peer as u32, s as i32, idx))
                        );
                    }
                });
            }
        }
    });
}

#[test]
fn any_index_n_to_one() {
    let f = fabric(2, 4);
    let m = multiplex(&f, &[4, 1]);
    for s in 0..4 {
        m[0].0.stream_send(&[s as u8], 1, 3, s, 0).unwrap();
    }
    let mut seen: Vec<(i32, u8)> = (0..4)
        .map(|_| {
            let (data, st) = m[1].0.stream_recv::<u8>(1, 0, 3, ANY_INDEX, 0).unwrap();
            (st.source_index, data[0])
        })
        .collect();
    seen.sort();
    assert_eq!(seen, (0..4).map(|s| (s, s as u8)).collect::<Vec<_>>());
}

#[test]
fn concrete_source_index_filters() {
    let f = fabric(2, 4);
    let m = multiplex(&f, &[4, 1]);
    let mut r = m[1].0.stream_irecv::<u8>(1, 0, 0, 2, 0).unwrap();
    m[0].0.stream_send(&[3u8], 1, 0, 3, 0).unwrap();
    f.process(1).progress_poll(&[m[1].0.recv_endpoint(0)]);
    assert!(!r.is_complete());
    assert_eq!(
        f.process(1)
            .endpoint(m[1].0.recv_endpoint(0))
            .unexpected_len(),
        1
    );
    m[0].0.stream_send(&[2u8], 1, 0, 2, 0).unwrap();
    assert_eq!(r.wait().unwrap().source_index, 2);
    assert_eq!(r.take_data::<u8>().unwrap(), vec![2]);
}

#[test]
fn polling_thread_receives_from_everyone() {
    let f = fabric(4, 2);
    let m = multiplex(&f, &[1, 2, 2, 2]);
    std::thread::scope(|scope| {
        for (comm, _) in &m[1..] {
            for idx in 0..2 {
                scope.spawn(move || {
                    let v = comm.rank() * 10 + idx as u32;
                    comm.stream_send(&[v as i32], 0, 1, idx, 0).unwrap();
                });
            }
        }
        let mut got: Vec<(i32, i32, i32)> = (0..6)
            .map(|_| {
                let (d, st) = m[0]
                    .0
                    .stream_recv::<i32>(1, ANY_SOURCE, ANY_TAG, ANY_INDEX, 0)
                    .unwrap();
                (st.source, st.source_index, d[0])
            })
            .collect();
        got.sort();
        let want: Vec<_> = (1..4)
            .flat_map(|r| (0..2).map(move |i| (r, i, r * 10 + i)))
            .collect();
        assert_eq!(got, want);
    });
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Send { from: usize, tag: i32 },
    Post { src: i32, tag: i32 },
    Poll,
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        (prop_oneof![Just(0usize), Just(2usize)], 0..2i32)
            .prop_map(|(from, tag)| Op::Send { from, tag }),
        (
            prop_oneof![Just(0), Just(2), Just(ANY_SOURCE)],
            prop_oneof![Just(0), Just(1), Just(ANY_TAG)]
        )
            .prop_map(|(src, tag)| Op::Post { src, tag }),
        Just(Op::Poll),
    ]
}

/// Replays `ops` against rank 1 of `comms` and returns the payload id each
/// receive obtained, in post order.
fn replay(f: &Fabric, comms: &[Communicator], ops: &[Op]) -> (Vec<Option<u32>>, Vec<Option<u32>>) {
    let rx = &comms[1];
    let ep = rx.recv_endpoint(0);
    let mut next_id = 1u32;
    let mut in_flight: Vec<RefMsg> = Vec::new();
    let mut events = Vec::new();
    let mut reqs = Vec::new();
    let poll = |in_flight: &mut Vec<RefMsg>, events: &mut Vec<RefEvent>| {
        f.process(1).progress_poll(&[ep]);
        events.extend(in_flight.drain(..).map(RefEvent::Arrive));
    };
    for op in ops {
        match *op {
            Op::Send { from, tag } => {
                comms[from].send(&next_id.to_le_bytes(), 1, tag).unwrap();
                in_flight.push(RefMsg {
                    src: from as u32,
                    tag,
                    id: next_id,
                });
                next_id += 1;
            }
            Op::Post { src, tag } => {
                reqs.push(rx.irecv::<u8>(4, src, tag).unwrap());
                events.push(RefEvent::Post(RefRecv { src, tag }));
            }
            Op::Poll => poll(&mut in_flight, &mut events),
        }
    }
    poll(&mut in_flight, &mut events);
    let got = reqs
        .iter_mut()
        .map(|r| {
            r.is_complete()
                .then(|| u32::from_le_bytes(r.take_bytes().unwrap().try_into().unwrap()))
        })
        .collect();
    (got, reference_match(&events))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn random_schedules_match_reference(ops in proptest::collection::vec(op_strategy(), 0..=6)) {
        let f = fabric(3, 0);
        let w = worlds(&f);
        let (got, want) = replay(&f, &w, &ops);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn stream_comm_matches_legacy(ops in proptest::collection::vec(op_strategy(), 0..=6)) {
        let legacy = Fabric::new(3, FabricConfig::new().implicit_pool_size(4)).unwrap();
        let (legacy_got, _) = replay(&legacy, &worlds(&legacy), &ops);

        let explicit = fabric(3, 1);
        let comms = explicit.run(|p| {
            let s = exclusive_stream(&p);
            p.world().stream_comm_create(&s).unwrap()
        });
        let (stream_got, want) = replay(&explicit, &comms, &ops);
        prop_assert_eq!(&legacy_got, &stream_got);
        prop_assert_eq!(stream_got, want);
    }

    #[test]
    fn sender_any_policy_preserves_order(ops in proptest::collection::vec(op_strategy(), 0..=6)) {
        let f = Fabric::new(
            3,
            FabricConfig::new().implicit_pool_size(3).implicit_policy(ImplicitPolicy::SenderAnyRecvDefault),
        )
        .unwrap();
        let (got, want) = replay(&f, &worlds(&f), &ops);
        prop_assert_eq!(got, want);
    }
}

#[test]
fn null_stream_member_uses_implicit_endpoints() {
    let f = fabric(2, 1);
    let comms = f.run(|p| {
        let s = if p.rank() == 0 {
            STREAM_NULL
        } else {
            Stream::create(&p, &Info::new()).unwrap()
        };
        p.world().stream_comm_create(&s).unwrap()
    });
    let implicit = f
        .process(0)
        .select_implicit_endpoint(comms[0].context_id(), streamix::Role::Receiver);
    assert_eq!(comms[0].recv_endpoint(0), implicit);
    assert_eq!(comms[1].route_endpoint(0, 0), implicit);
    assert_eq!(comms[0].route_endpoint(1, 0), comms[1].recv_endpoint(0));
    comms[0].send(&[4u8], 1, 0).unwrap();
    comms[1].send(&[5u8], 0, 0).unwrap();
    assert_eq!(comms[1].recv::<u8>(1, 0, 0).unwrap().0, vec![4]);
    assert_eq!(comms[0].recv::<u8>(1, 1, 0).unwrap().0, vec![5]);
}
