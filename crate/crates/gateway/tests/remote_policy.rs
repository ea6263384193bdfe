use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use trileg_core::actuation::VoltageTriple;
use trileg_core::codec::build_target;
use trileg_core::config::Config;
use trileg_core::eval::{run_eval, EvalSettings};
use trileg_core::expert::InstructionSpec;
use trileg_core::primitive::{PrimitiveKind, Violation};
use trileg_core::robot::RobotState;
use trileg_core::rollout::{Policy, PolicyError};
use trileg_gateway::protocol::{ClientMessage, ServerMessage};
use trileg_gateway::remote::RemotePolicy;

/// Serves a scripted policy on a loopback port. `reply` sees each obs and
/// returns the line to send back, or `None` to hang up.
fn fake_policy<F>(reply: F) -> (SocketAddr, Arc<AtomicUsize>)
where
    F: Fn(&ServerMessage, usize) -> Option<ClientMessage> + Send + Sync + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(AtomicUsize::new(0));
    let counter = seen.clone();
    let reply = Arc::new(reply);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { return };
            let reply = reply.clone();
            let counter = counter.clone();
            std::thread::spawn(move || {
                let mut writer = stream.try_clone().unwrap();
                let mut reader = BufReader::new(stream);
                let mut n = 0;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    counter.fetch_add(1, Ordering::SeqCst);
                    let obs = ServerMessage::parse(line.trim()).unwrap();
                    match reply(&obs, n) {
                        Some(m) => {
                            if writer.write_all(format!("{}\n", m.to_line()).as_bytes()).is_err() {
                                return;
                            }
                        }
                        None => return,
                    }
                    n += 1;
                }
            });
        }
    });
    (addr, seen)
}

fn remote_factory(
    addr: SocketAddr,
    config: &Config,
) -> impl FnMut(&InstructionSpec, &RobotState) -> Result<Box<dyn Policy>, PolicyError> + '_ {
    move |instr, _| Ok(Box::new(RemotePolicy::connect(addr, instr, config, Duration::from_secs(20))?) as Box<dyn Policy>)
}

#[test]
fn token_policy_with_hold_completes_squat() {
    let config = Config::default();
    let up = build_target(VoltageTriple::new(0.0, 0.0, 0.5), &config.codec).unwrap();
    let (addr, seen) = fake_policy(move |obs, _| {
        let ServerMessage::Obs { state, frames, instruction, .. } = obs else { panic!() };
        assert_eq!(frames.len(), 4);
        assert_eq!(instruction, "SQUAT");
        if state.v[2] < 2.0 {
            Some(ClientMessage::ActTokens { ids: up.clone(), repeat: None })
        } else {
            Some(ClientMessage::Act { dv: [0.0; 3], repeat: Some(20) })
        }
    });
    let settings = EvalSettings { trials: 2, ..Default::default() };
    let row = run_eval(PrimitiveKind::Squat, &settings, &config, remote_factory(addr, &config)).unwrap();
    assert_eq!(row.successes, 2, "{row:?}");
    // held steps need no round trip
    let steps: usize = row.outcomes.iter().map(|o| o.result.steps_used).sum();
    assert!(seen.load(Ordering::SeqCst) < steps, "{} obs for {steps} steps", seen.load(Ordering::SeqCst));
}

#[test]
fn disconnect_is_a_recorded_failure() {
    let config = Config::default();
    let (addr, _) = fake_policy(|_, n| if n < 3 { Some(ClientMessage::Act { dv: [0.0, 0.0, 0.5], repeat: None }) } else { None });
    let settings = EvalSettings { trials: 3, ..Default::default() };
    let row = run_eval(PrimitiveKind::Squat, &settings, &config, remote_factory(addr, &config)).unwrap();
    assert_eq!(row.successes, 0);
    assert_eq!(row.violations.get(&Violation::PolicyFault), Some(&3));
    assert!(row.outcomes.iter().all(|o| o.result.steps_used == 3));
}

#[test]
fn unreachable_policy_fails_every_trial() {
    let config = Config::default();
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let settings = EvalSettings { trials: 2, ..Default::default() };
    let row = run_eval(PrimitiveKind::Forward, &settings, &config, remote_factory(addr, &config)).unwrap();
    assert_eq!(row.rate, 0.0);
    assert_eq!(row.violations.get(&Violation::PolicyFault), Some(&2));
}

#[test]
fn non_act_reply_is_a_fault() {
    let config = Config::default();
    let (addr, _) = fake_policy(|_, _| Some(ClientMessage::RecordStop {}));
    let settings = EvalSettings { trials: 1, ..Default::default() };
    let row = run_eval(PrimitiveKind::LiftLeg, &settings, &config, remote_factory(addr, &config)).unwrap();
    assert_eq!(row.outcomes[0].result.violation, Violation::PolicyFault);
}
