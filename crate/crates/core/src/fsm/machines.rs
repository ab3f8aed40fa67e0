use serde::{Deserialize, Serialize};

use super::{CombOutputDef, FsmError, GuardedValue, MachineDef, RegisterDef, TaskMachine};

const SERIAL_STOP: &str = include_str!("../../assets/machines/serial_parity_stop.json");
const SERIAL_WAIT: &str = include_str!("../../assets/machines/serial_parity_wait.json");

/// How the serial receiver leaves its failure state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SerialVariant {
    /// Back to idle on the next cycle.
    Stop,
    /// Hold until a 1 arrives on `in`.
    Wait,
}

pub fn serial_receiver_machine(variant: SerialVariant) -> TaskMachine {
    let src = match variant {
        SerialVariant::Stop => SERIAL_STOP,
        SerialVariant::Wait => SERIAL_WAIT,
    };
    TaskMachine::from_json(src).expect("bundled machine definition is valid")
}

/// A free-running `cnt` register with synchronous `rst`, optionally gated by
/// an enable input, and a terminal-count output `tc`.
pub fn counter_machine(width: u32, enable_input: Option<&str>) -> Result<TaskMachine, FsmError> {
    if width == 0 || width > 64 {
        return Err(FsmError::InvalidMachine(format!("counter width {width} outside 1..=64")));
    }
    let max = if width == 64 { u64::MAX } else { (1u64 << width) - 1 };
    let mut inputs = vec!["rst".to_string()];
    let (count_when, tc) = match enable_input {
        Some(en) => {
            inputs.push(en.to_string());
            (en.to_string(), format!("cnt == {max} && {en}"))
        }
        None => ("1".to_string(), format!("cnt == {max}")),
    };
    TaskMachine::from_def(MachineDef {
        name: format!("counter_w{width}"),
        description: format!("{width}-bit up counter; rst clears, wraps modulo 2^{width}"),
        states: vec!["RUN".into()],
        initial_state: "RUN".into(),
        inputs,
        registers: vec![RegisterDef {
            name: "cnt".into(),
            width,
            reset: 0,
            updates: vec![
                GuardedValue {
                    when: "rst".into(),
                    value: "0".into(),
                },
                GuardedValue {
                    when: count_when,
                    value: "cnt + 1".into(),
                },
            ],
        }],
        transitions: vec![],
        moore_outputs: vec![],
        comb_outputs: vec![CombOutputDef {
            name: "tc".into(),
            width: 1,
            expr: tc,
        }],
        show_state: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsm::{simulate, InputSchedule, StepTrace};
    use proptest::prelude::*;

    fn run(m: &TaskMachine, bits: &[u8]) -> StepTrace {
        let s: InputSchedule = [("in".to_string(), bits.to_vec())].into_iter().collect();
        simulate(m, &s, bits.len()).unwrap().0
    }

    /// Idle, start bit, the 10 frame bits, then idle ones.
    fn framed(frame: &[u8]) -> Vec<u8> {
        let mut v = vec![1, 0];
        v.extend_from_slice(frame);
        v.extend_from_slice(&[1, 1, 1]);
        v
    }

    #[test]
    fn start_bit_sampled_at_fourth_edge() {
        let m = serial_receiver_machine(SerialVariant::Stop);
        let t = run(&m, &[1, 1, 0, 1, 0, 1]);
        assert_eq!(t.states().take(4).collect::<Vec<_>>(), ["S0", "S0", "S0", "S1"]);
        assert_eq!(t.state_names[t.steps[2].next_state], "S1");
    }

    #[test]
    fn success_and_failure_frames() {
        for v in [SerialVariant::Stop, SerialVariant::Wait] {
            let m = serial_receiver_machine(v);
            // data 1,0,1,0,0,0,0,0 has two ones; parity 1 makes nine bits odd
            let ok = run(&m, &framed(&[1, 0, 1, 0, 0, 0, 0, 0, 1, 1]));
            assert_eq!(ok.state_name(12), "S2");
            assert_eq!(ok.value("done", 12), Some(1));
            assert_eq!(ok.value("out_byte", 12), Some(0b0000_0101));
            let bad = run(&m, &framed(&[1, 0, 1, 0, 0, 0, 0, 0, 1, 0]));
            assert_eq!(bad.state_name(12), "S3");
            assert_eq!(bad.value("err", 12), Some(1));
            assert!(!bad.states().any(|s| s == "S2"));
        }
    }

    #[test]
    fn wait_variant_holds_until_one() {
        let stop = serial_receiver_machine(SerialVariant::Stop);
        let wait = serial_receiver_machine(SerialVariant::Wait);
        let mut bits = framed(&[0; 10]);
        bits[12] = 0;
        bits[13] = 0;
        bits.push(1);
        assert_eq!(run(&stop, &bits).state_name(13), "S0");
        let t = run(&wait, &bits);
        assert_eq!(t.states().skip(12).take(3).collect::<Vec<_>>(), ["S3", "S3", "S3"]);
        assert_eq!(t.state_name(15), "S0");
    }

    #[test]
    fn exhaustive_frames_match_r1_and_r2() {
        for v in [SerialVariant::Stop, SerialVariant::Wait] {
            let m = serial_receiver_machine(v);
            for word in 0u32..1024 {
                let frame: Vec<u8> = (0..10).map(|i| ((word >> i) & 1) as u8).collect();
                let r1 = frame[..9].iter().fold(0, |a, b| a ^ b) == 1;
                let r2 = frame[9] == 1;
                let t = run(&m, &framed(&frame));
                let expected = if r1 && r2 { "S2" } else { "S3" };
                assert_eq!(t.state_name(12), expected, "frame {frame:?}");
                let data = frame[..8].iter().rev().fold(0u64, |a, &b| (a << 1) | u64::from(b));
                assert_eq!(t.value("out_byte", 12), Some(data));
            }
        }
    }

    /// Straight-line model of the receiver, written without the table engine.
    fn reference(bits: &[u8], wait: bool) -> Vec<(usize, u64, u64, u64)> {
        let (mut st, mut cnt, mut odd, mut byte) = (0usize, 0u64, 0u64, 0u64);
        let mut out = Vec::new();
        for &b in bits {
            let b = u64::from(b);
            out.push((st, cnt, odd, byte));
            let (nst, ncnt, nodd, nbyte) = match st {
                0 => (if b == 0 { 1 } else { 0 }, 0, 0, byte),
                1 if cnt < 9 => (1, cnt + 1, odd ^ b, if cnt < 8 { (byte >> 1) | (b << 7) } else { byte }),
                1 => (if odd == 1 && b == 1 { 2 } else { 3 }, cnt, 0, byte),
                2 => (0, cnt, 0, byte),
                _ => (if !wait || b == 1 { 0 } else { 3 }, cnt, 0, byte),
            };
            (st, cnt, odd, byte) = (nst, ncnt, nodd, nbyte);
        }
        out
    }

    proptest! {
        #[test]
        fn engine_matches_reference(bits in proptest::collection::vec(0u8..2, 1..120), wait: bool) {
            let v = if wait { SerialVariant::Wait } else { SerialVariant::Stop };
            let t = run(&serial_receiver_machine(v), &bits);
            let want = reference(&bits, wait);
            for (c, (st, cnt, odd, byte)) in want.into_iter().enumerate() {
                prop_assert_eq!(t.steps[c].state, st);
                prop_assert_eq!(t.value("data_cnt", c), Some(cnt));
                prop_assert_eq!(t.value("odd", c), Some(odd));
                prop_assert_eq!(t.value("out_byte", c), Some(byte));
                prop_assert_eq!(t.value("done", c), Some(u64::from(st == 2)));
                prop_assert_eq!(t.value("err", c), Some(u64::from(st == 3)));
            }
        }

        #[test]
        fn receiver_trace_invariants(bits in proptest::collection::vec(0u8..2, 2..120)) {
            let t = run(&serial_receiver_machine(SerialVariant::Stop), &bits);
            for c in 0..t.len() {
                prop_assert!(t.value("done", c).unwrap() & t.value("err", c).unwrap() == 0);
                let cnt = t.value("data_cnt", c).unwrap();
                prop_assert!(cnt <= 9);
                if c + 1 < t.len() {
                    let next = t.value("data_cnt", c + 1).unwrap();
                    let expected = match t.state_name(c) {
                        "S0" => 0,
                        "S1" if cnt < 9 => cnt + 1,
                        _ => cnt,
                    };
                    prop_assert_eq!(next, expected);
                }
            }
        }

        #[test]
        fn counter_matches_fold(width in 1u32..9, ens in proptest::collection::vec(0u8..2, 1..80), rsts in proptest::collection::vec(0u8..2, 80)) {
            let m = counter_machine(width, Some("en")).unwrap();
            let n = ens.len();
            let s: InputSchedule = [("en".to_string(), ens.clone()), ("rst".to_string(), rsts[..n].to_vec())].into_iter().collect();
            let (t, _) = simulate(&m, &s, n).unwrap();
            let modulus = 1u64 << width;
            let mut cnt = 0u64;
            for c in 0..n {
                prop_assert_eq!(t.value("cnt", c), Some(cnt));
                prop_assert_eq!(t.value("tc", c), Some(u64::from(cnt == modulus - 1 && ens[c] == 1)));
                cnt = if rsts[c] == 1 { 0 } else if ens[c] == 1 { (cnt + 1) % modulus } else { cnt };
            }
        }
    }

    #[test]
    fn counter_trivial_cases() {
        let m = counter_machine(3, Some("en")).unwrap();
        let n = 20;
        for (en, expect) in [(1u8, (0..n).map(|c| c as u64 % 8).collect::<Vec<_>>()), (0, vec![0; n])] {
            let s: InputSchedule = [("en".to_string(), vec![en; n]), ("rst".to_string(), vec![0; n])].into_iter().collect();
            let (t, td) = simulate(&m, &s, n).unwrap();
            assert_eq!((0..n).map(|c| t.value("cnt", c).unwrap()).collect::<Vec<_>>(), expect);
            assert!(td.signal("state").is_err());
        }
        let free = counter_machine(64, None).unwrap();
        let s: InputSchedule = [("rst".to_string(), vec![0; 3])].into_iter().collect();
        assert_eq!(simulate(&free, &s, 3).unwrap().0.value("cnt", 2), Some(2));
        assert!(counter_machine(0, None).is_err());
        assert!(counter_machine(4, Some("rst")).is_err());
    }

    #[test]
    fn identical_inputs_identical_traces() {
        let m = serial_receiver_machine(SerialVariant::Wait);
        let bits = framed(&[1, 1, 0, 1, 0, 0, 1, 0, 1, 1]);
        assert_eq!(run(&m, &bits), run(&m, &bits));
    }
}
