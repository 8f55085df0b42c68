use cyton_core::codec::{counts_to_microvolts, Gain, RawPacket, INT24_MAX, INT24_MIN};
use cyton_core::stream::*;
use proptest::prelude::*;
use std::collections::VecDeque;
use std::time::Instant;

/// Packets whose counters advance by the given steps (1 = consecutive).
fn packets_from_steps(start: u8, steps: &[u8], values: &[[i32; 8]]) -> Vec<RawPacket> {
    let mut seq = start;
    let mut out = vec![RawPacket::new(seq, values[0])];
    for (i, &s) in steps.iter().enumerate() {
        seq = seq.wrapping_add(s);
        out.push(RawPacket::new(seq, values[(i + 1) % values.len()]));
    }
    out
}

fn arb_counts() -> impl Strategy<Value = [i32; 8]> {
    prop::array::uniform8(INT24_MIN / 4..=INT24_MAX / 4)
}

/// Check each interpolated run against the straight line between the real
/// frames around it, recomputed here from scratch.
fn assert_on_lines(frames: &[SampleFrame]) -> Result<(), TestCaseError> {
    let mut i = 0;
    while i < frames.len() {
        if !frames[i].interpolated {
            i += 1;
            continue;
        }
        let start = i;
        while i < frames.len() && frames[i].interpolated {
            i += 1;
        }
        prop_assert!(start > 0 && i < frames.len(), "interpolated run at the stream edge");
        let (a, b) = (&frames[start - 1], &frames[i]);
        let n = (i - start + 1) as f64;
        for (j, f) in frames[start..i].iter().enumerate() {
            let t = (j + 1) as f64 / n;
            for ch in 0..a.values.len() {
                let want = a.values[ch] * (1.0 - t) + b.values[ch] * t;
                prop_assert!((f.values[ch] - want).abs() < 1e-6, "frame {} ch {ch}", f.index);
            }
        }
    }
    Ok(())
}

proptest! {
    #[test]
    fn small_gaps_keep_indices_consecutive(
        steps in prop::collection::vec(1u8..=51, 0..60),
        values in prop::collection::vec(arb_counts(), 1..8),
        start in any::<u8>(),
    ) {
        let packets = packets_from_steps(start, &steps, &values);
        let mut r = Reconciler::new(StreamConfig::default()).unwrap();
        let (frames, reports) = reconcile(&packets, &mut r);
        let expected_len = 1 + steps.iter().map(|&s| s as usize).sum::<usize>();
        prop_assert_eq!(frames.len(), expected_len);
        for (i, f) in frames.iter().enumerate() {
            prop_assert_eq!(f.index, i as u64);
            prop_assert_eq!(f.values.len(), 8);
        }
        let gaps = steps.iter().filter(|&&s| s > 1).count();
        prop_assert_eq!(reports.len(), gaps);
        prop_assert_eq!(r.stats().gaps_interpolated, gaps as u64);
        assert_on_lines(&frames)?;
    }

    #[test]
    fn real_frames_are_only_rescaled(
        steps in prop::collection::vec(1u8..=255, 0..60),
        values in prop::collection::vec(arb_counts(), 1..8),
    ) {
        let packets = packets_from_steps(0, &steps, &values);
        let mut r = Reconciler::new(StreamConfig::default()).unwrap();
        let (frames, reports) = reconcile(&packets, &mut r);
        let real: Vec<&SampleFrame> = frames.iter().filter(|f| !f.interpolated).collect();
        prop_assert_eq!(real.len(), packets.len());
        for (f, p) in real.iter().zip(&packets) {
            let want: Vec<f64> = p.channels.iter().map(|&c| counts_to_microvolts(c, Gain::DEFAULT)).collect();
            prop_assert_eq!(&f.values, &want);
        }
        // indices increase; a dropout skips exactly the reported count
        let mut dropped = 0;
        for g in reports.iter().filter_map(|r| match r { StreamReport::Gap(g) => Some(g), _ => None }) {
            prop_assert!(g.missing >= 1);
            prop_assert_eq!(g.action == GapAction::Interpolated, g.missing <= 50);
            if g.action == GapAction::Dropout {
                dropped += g.missing;
            }
        }
        for w in frames.windows(2) {
            prop_assert!(w[1].index > w[0].index);
        }
        let last = frames.last().unwrap().index;
        prop_assert_eq!(last + 1, frames.len() as u64 + dropped);
    }

    #[test]
    fn daisy_loss_keeps_real_halves(
        lost in prop::collection::vec(any::<bool>(), 40),
        values in prop::collection::vec(arb_counts(), 40),
    ) {
        let packets: Vec<RawPacket> = (0..40u8)
            .filter(|&n| n == 0 || !lost[n as usize])
            .map(|n| RawPacket::new(n, values[n as usize]))
            .collect();
        let mut r = Reconciler::new(StreamConfig::daisy()).unwrap();
        let mut out = r.push_packets(&packets);
        // the closing pair makes every earlier slot resolvable
        out.frames.extend(r.push_packets(&[RawPacket::new(40, values[0]), RawPacket::new(41, values[1])]).frames);
        for f in &out.frames {
            prop_assert_eq!(f.values.len(), 16);
            let pair = f.index as usize;
            if pair >= 20 {
                continue;
            }
            for (board, n) in [(0usize, 2 * pair), (1, 2 * pair + 1)] {
                let present = n == 0 || !lost[n];
                if present {
                    let want: Vec<f64> = values[n].iter().map(|&c| counts_to_microvolts(c, Gain::DEFAULT)).collect();
                    prop_assert_eq!(&f.values[board * 8..board * 8 + 8], &want[..]);
                }
            }
        }
        for w in out.frames.windows(2) {
            prop_assert!(w[1].index > w[0].index);
        }
    }

    #[test]
    fn ring_matches_a_model(
        cap in 1usize..20,
        ops in prop::collection::vec((0u64..3, 0u64..30, 0usize..8), 1..80),
    ) {
        let mut ring = RingBuffer::new(cap);
        let mut model: VecDeque<u64> = VecDeque::new();
        let mut next = 0u64;
        for (jump, from, len) in ops {
            next += jump;
            let frame = SampleFrame { index: next, values: vec![next as f64], interpolated: false };
            if model.back().is_some_and(|&b| b + 1 != next) {
                model.clear();
            }
            ring.append(frame);
            model.push_back(next);
            if model.len() > cap {
                model.pop_front();
            }
            next += 1;
            prop_assert_eq!(ring.len(), model.len());
            prop_assert_eq!(ring.retained(), Some(model[0]..model[0] + model.len() as u64));
            let ok = len > 0 && model.contains(&from) && model.contains(&(from + len as u64 - 1));
            match ring.slice(from, len) {
                Ok(it) => {
                    prop_assert!(ok || len == 0);
                    let got: Vec<u64> = it.map(|f| f.index).collect();
                    prop_assert_eq!(got, (from..from + len as u64).collect::<Vec<_>>());
                }
                Err(e) => {
                    prop_assert!(!ok);
                    prop_assert_eq!(e.retained, ring.retained());
                }
            }
        }
    }
}

#[test]
fn reconcile_runs_far_faster_than_real_time() {
    let packets: Vec<RawPacket> = (0..25_000u32)
        .filter(|n| n % 97 != 0)
        .map(|n| RawPacket::new(n as u8, [n as i32; 8]))
        .collect();
    let mut r = Reconciler::new(StreamConfig::default()).unwrap();
    let t = Instant::now();
    let (frames, _) = reconcile(&packets, &mut r);
    let elapsed = t.elapsed();
    // 25 000 packets are 100 s of signal
    assert!(elapsed.as_secs_f64() < 1.0, "{elapsed:?}");
    assert_eq!(frames.len(), 25_000 - 1);
}
