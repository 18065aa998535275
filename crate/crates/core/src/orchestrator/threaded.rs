//! Wall-clock execution: every task runs on its own thread and reports back
//! to the manager over a channel. Verification runs concurrently with the
//! target's update. Trace timestamps are nanoseconds since episode start.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::manager::{Command, Manager, TaskId, TaskResult};
use super::runner::TaskRunner;
use super::{EngineError, EpisodeResult};
use crate::backends::{pace, CancellationToken, Completion};
use crate::trace::Ticks;

pub fn run_threaded<R: TaskRunner + 'static>(
    mut manager: Manager,
    runner: Arc<R>,
    tick: Duration,
    deadline: Option<Duration>,
) -> Result<EpisodeResult, EngineError> {
    let (tx, rx) = mpsc::channel::<(TaskId, TaskResult)>();
    let epoch = Instant::now();
    let elapsed = |at: Instant| -> Ticks { at.duration_since(epoch).as_nanos() as Ticks };
    let mut tokens: BTreeMap<TaskId, CancellationToken> = BTreeMap::new();
    let mut handles = Vec::new();

    let mut dispatch = |commands: Vec<Command>, tokens: &mut BTreeMap<TaskId, CancellationToken>| {
        for cmd in commands {
            match cmd {
                Command::Start(task) => {
                    let token = CancellationToken::new();
                    tokens.insert(task.id, token.clone());
                    let runner = Arc::clone(&runner);
                    let tx = tx.clone();
                    handles.push(std::thread::spawn(move || {
                        let (result, cost) = runner.run(&task, &token);
                        let result = match result {
                            Ok(value) => pace(Completion { value, cost }, tick, &token),
                            Err(e) => Err(e),
                        };
                        // The manager may already be gone; nothing to report to then.
                        let _ = tx.send((task.id, result));
                    }));
                }
                Command::Cancel(id) => {
                    if let Some(token) = tokens.remove(&id) {
                        token.cancel();
                    }
                }
            }
        }
    };

    let first = manager.begin_and_pump(0);
    dispatch(first, &mut tokens);

    let outcome = loop {
        if manager.is_finished() {
            break Ok(());
        }
        if tokens.is_empty() {
            break Err(EngineError::Protocol(format!(
                "no task in flight with state {:?}",
                manager.state()
            )));
        }
        let received = match deadline {
            Some(limit) => {
                let left = limit.saturating_sub(epoch.elapsed());
                match rx.recv_timeout(left) {
                    Ok(msg) => Some(msg),
                    Err(mpsc::RecvTimeoutError::Timeout) => None,
                    Err(mpsc::RecvTimeoutError::Disconnected) => {
                        break Err(EngineError::Protocol("all task threads exited".into()))
                    }
                }
            }
            None => match rx.recv() {
                Ok(msg) => Some(msg),
                Err(_) => break Err(EngineError::Protocol("all task threads exited".into())),
            },
        };
        let Some((id, result)) = received else {
            let (cancelled, err) = manager.expire(elapsed(Instant::now()));
            for id in cancelled {
                if let Some(t) = tokens.remove(&id) {
                    t.cancel();
                }
            }
            break Err(err);
        };
        tokens.remove(&id);
        match manager.on_complete(elapsed(Instant::now()), id, result) {
            Ok(commands) => dispatch(commands, &mut tokens),
            Err(e) => break Err(e),
        }
    };

    for token in tokens.values() {
        token.cancel();
    }
    drop(tx);
    for handle in handles {
        let _ = handle.join();
    }
    outcome.map(|()| manager.into_result())
}
