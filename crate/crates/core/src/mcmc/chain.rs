use std::io::{Read, Write};

use super::kernel::{AcceptanceStats, MarkovKernel};
use super::StateVector;
use crate::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    /// `X_1, ..., X_steps`; the initial state is not included.
    pub states: Vec<StateVector>,
    /// Accept/step counts accumulated during this run only.
    pub acceptance: Option<AcceptanceStats>,
}

impl ChainTrace {
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }
}

pub fn run_chain(kernel: &dyn MarkovKernel, x0: &StateVector, steps: usize, rng: &mut RngStream) -> Result<ChainTrace> {
    let before = kernel.acceptance();
    let mut states = Vec::with_capacity(steps);
    let mut x = x0.clone();
    for step in 1..=steps {
        match kernel.step(&x, rng) {
            Ok(next) if next.is_finite() => x = next,
            Ok(next) => {
                return Err(Error::Chain {
                    step,
                    partial: states,
                    source: Box::new(Error::NonFinite(format!("kernel produced {:?}", next.0))),
                })
            }
            Err(e) => return Err(Error::Chain { step, partial: states, source: Box::new(e) }),
        }
        states.push(x.clone());
    }
    let acceptance = match (before, kernel.acceptance()) {
        (Some(b), Some(a)) => Some(a.since(&b)),
        _ => None,
    };
    Ok(ChainTrace { states, acceptance })
}

/// CSV with header `t,x_1,...,x_d`, rows numbered from 1.
pub fn write_trace_csv<W: Write>(states: &[StateVector], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = states.first().map_or(0, |s| s.dim());
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    for (t, s) in states.iter().enumerate() {
        let mut row = vec![(t + 1).to_string()];
        row.extend(s.iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<StateVector>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = vec![];
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>().map_err(|e| Error::InvalidArgument(format!("bad trace value {f}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(StateVector(vals));
    }
    Ok(out)
}

pub fn write_acceptance_json<W: Write>(stats: &AcceptanceStats, out: W) -> Result<()> {
    serde_json::to_writer(out, stats)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::{rwmh_kernel, FnTarget, SharedTarget};
    use std::sync::Arc;

    struct Identity(SharedTarget);
    impl MarkovKernel for Identity {
        fn step(&self, x: &StateVector, _rng: &mut RngStream) -> Result<StateVector> {
            Ok(x.clone())
        }
        fn target(&self) -> &SharedTarget {
            &self.0
        }
    }

    struct FailsAt(SharedTarget, std::sync::atomic::AtomicUsize, usize);
    impl MarkovKernel for FailsAt {
        fn step(&self, x: &StateVector, _rng: &mut RngStream) -> Result<StateVector> {
            let n = self.1.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            if n + 1 == self.2 {
                Err(Error::InvalidDensity("boom".into()))
            } else {
                Ok(StateVector(vec![x[0] + 1.0]))
            }
        }
        fn target(&self) -> &SharedTarget {
            &self.0
        }
    }

    fn target() -> SharedTarget {
        FnTarget::shared(1, |x: &[f64]| -0.5 * x[0] * x[0])
    }

    #[test]
    fn zero_steps_and_identity() {
        let k = Identity(target());
        let mut rng = RngStream::new(0, 0);
        let x0 = StateVector(vec![1.5]);
        assert!(run_chain(&k, &x0, 0, &mut rng).unwrap().states.is_empty());
        let tr = run_chain(&k, &x0, 50, &mut rng).unwrap();
        assert!(tr.states.iter().all(|s| *s == x0));
        assert!(tr.acceptance.is_none());
    }

    #[test]
    fn partial_trace_preserved() {
        let k = FailsAt(target(), Default::default(), 4);
        let mut rng = RngStream::new(0, 0);
        match run_chain(&k, &StateVector(vec![0.0]), 10, &mut rng) {
            Err(Error::Chain { step, partial, .. }) => {
                assert_eq!(step, 4);
                assert_eq!(partial.len(), 3);
                assert_eq!(partial[2][0], 3.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn deterministic_bytes_and_roundtrip() {
        let k = Arc::new(rwmh_kernel(target(), 1.0).unwrap());
        let run = || {
            let mut rng = RngStream::new(77, 1);
            let tr = run_chain(k.as_ref(), &StateVector(vec![0.0]), 500, &mut rng).unwrap();
            let mut buf = vec![];
            write_trace_csv(&tr.states, &mut buf).unwrap();
            (buf, tr)
        };
        let (a, tra) = run();
        let (b, trb) = run();
        assert_eq!(a, b);
        assert_eq!(read_trace_csv(a.as_slice()).unwrap(), tra.states);
        let acc = tra.acceptance.unwrap();
        assert_eq!(acc.step_count, 500);
        // The second run counts only its own steps.
        assert_eq!(trb.acceptance.unwrap().step_count, 500);
        assert!(String::from_utf8(a).unwrap().starts_with("t,x_1\n1,"));
        let mut js = vec![];
        write_acceptance_json(&acc, &mut js).unwrap();
        assert!(String::from_utf8(js).unwrap().contains("\"accept_count\""));
    }
}
