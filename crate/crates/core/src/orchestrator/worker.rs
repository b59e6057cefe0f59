use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::{ApiGardenView, EditOutcome, NodeDetail, Orchestrator, OrchestratorError, StepOutcome, UserEdit};
use crate::garden::{Mode, NodeId};
use crate::persistence::{EventPayload, GardenEvent, GardenState};

type Reply<T> = Sender<Result<T, OrchestratorError>>;

enum Command {
    Step(usize, Reply<Vec<StepOutcome>>),
    Seed(String, Reply<NodeId>),
    Edit(UserEdit, Reply<EditOutcome>),
    Restore(String, Reply<()>),
    Shutdown,
}

#[derive(Default)]
struct Published {
    state: Arc<GardenState>,
    events: Vec<GardenEvent>,
    in_progress: Option<NodeId>,
    /// The worker is blocked waiting for a command.
    waiting: bool,
    stopped: bool,
    last_error: Option<OrchestratorError>,
}

#[derive(Default)]
struct Shared {
    published: Mutex<Published>,
    changed: Condvar,
}

impl Shared {
    fn update(&self, f: impl FnOnce(&mut Published)) {
        f(&mut self.published.lock().unwrap());
        self.changed.notify_all();
    }
}

/// Runs an orchestrator on its own thread. Commands are queued and executed
/// between work units; readers get consistent snapshots taken between units
/// plus the live event stream.
pub struct GardenHandle {
    tx: Sender<Command>,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<Orchestrator>>,
}

impl GardenHandle {
    pub fn spawn(mut orch: Orchestrator) -> Self {
        let shared = Arc::new(Shared::default());
        {
            let mut p = shared.published.lock().unwrap();
            p.state = Arc::new(orch.state().clone());
            p.events = orch.events().to_vec();
        }
        let observed = Arc::clone(&shared);
        orch.set_observer(move |event| {
            observed.update(|p| {
                match &event.payload {
                    EventPayload::WorkStarted { item } => p.in_progress = Some(item.node()),
                    EventPayload::WorkFinished { .. } => p.in_progress = None,
                    _ => {}
                }
                p.events.push(event.clone());
            })
        });
        let (tx, rx) = mpsc::channel();
        let worker_shared = Arc::clone(&shared);
        let thread = thread::Builder::new()
            .name("garden-worker".into())
            .spawn(move || run(orch, rx, worker_shared))
            .expect("spawn garden worker");
        Self { tx, shared, thread: Some(thread) }
    }

    fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, OrchestratorError> {
        let (reply, answer) = mpsc::channel();
        self.tx.send(make(reply)).map_err(|_| OrchestratorError::WorkerGone)?;
        answer.recv().map_err(|_| OrchestratorError::WorkerGone)?
    }

    /// Performs up to `units` work units; stops early at Idle or Paused.
    pub fn step(&self, units: usize) -> Result<Vec<StepOutcome>, OrchestratorError> {
        self.call(|r| Command::Step(units, r))
    }

    pub fn seed(&self, text: &str) -> Result<NodeId, OrchestratorError> {
        self.call(|r| Command::Seed(text.to_string(), r))
    }

    pub fn edit(&self, edit: UserEdit) -> Result<EditOutcome, OrchestratorError> {
        self.call(|r| Command::Edit(edit, r))
    }

    pub fn set_mode(&self, mode: Mode) -> Result<(), OrchestratorError> {
        self.edit(UserEdit::SetMode { mode }).map(|_| ())
    }

    pub fn restore(&self, backup_id: &str) -> Result<(), OrchestratorError> {
        self.call(|r| Command::Restore(backup_id.to_string(), r))
    }

    pub fn snapshot(&self) -> Arc<GardenState> {
        Arc::clone(&self.shared.published.lock().unwrap().state)
    }

    pub fn view(&self) -> Option<ApiGardenView> {
        let p = self.shared.published.lock().unwrap();
        let last_seq = p.events.last().map(|e| e.seq);
        let mut view = ApiGardenView::from_state(&p.state, last_seq)?;
        view.in_progress = p.in_progress;
        Some(view)
    }

    pub fn node(&self, id: NodeId) -> Option<NodeDetail> {
        let state = self.snapshot();
        NodeDetail::from_garden(state.garden()?, id)
    }

    /// Error from the last Play-mode unit, if it failed.
    pub fn last_error(&self) -> Option<OrchestratorError> {
        self.shared.published.lock().unwrap().last_error.clone()
    }

    pub fn events_since(&self, from: u64) -> Vec<GardenEvent> {
        let p = self.shared.published.lock().unwrap();
        p.events.get(from as usize..).map(<[GardenEvent]>::to_vec).unwrap_or_default()
    }

    /// Blocks until at least one event with `seq >= from` exists, the worker
    /// stops, or `timeout` passes.
    pub fn wait_events(&self, from: u64, timeout: Duration) -> Vec<GardenEvent> {
        let p = self.shared.published.lock().unwrap();
        let (p, _) = self
            .shared
            .changed
            .wait_timeout_while(p, timeout, |p| p.events.len() as u64 <= from && !p.stopped)
            .unwrap();
        p.events.get(from as usize..).map(<[GardenEvent]>::to_vec).unwrap_or_default()
    }

    /// Blocks until the worker has nothing left to do: it waits for a
    /// command and no Play loop is running. Returns false on timeout.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut p = self.shared.published.lock().unwrap();
        while !(p.waiting || p.stopped) {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return false;
            }
            p = self.shared.changed.wait_timeout(p, left).unwrap().0;
        }
        true
    }

    /// Stops the worker and hands the orchestrator back.
    pub fn shutdown(mut self) -> Option<Orchestrator> {
        self.stop()
    }

    fn stop(&mut self) -> Option<Orchestrator> {
        let _ = self.tx.send(Command::Shutdown);
        self.thread.take().and_then(|t| t.join().ok())
    }
}

impl Drop for GardenHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn publish(orch: &Orchestrator, shared: &Shared, waiting: bool) {
    let state = Arc::new(orch.state().clone());
    shared.update(|p| {
        p.state = state;
        p.waiting = waiting;
    });
}

fn run(mut orch: Orchestrator, rx: Receiver<Command>, shared: Arc<Shared>) -> Orchestrator {
    // Set when a Play loop reaches an empty frontier; cleared by any command.
    let mut idle = false;
    loop {
        let playing = orch.mode() == Mode::Play && !idle;
        let command = if playing {
            match rx.try_recv() {
                Ok(c) => Some(c),
                Err(TryRecvError::Empty) => None,
                Err(TryRecvError::Disconnected) => break,
            }
        } else {
            shared.update(|p| p.waiting = true);
            match rx.recv() {
                Ok(c) => Some(c),
                Err(_) => break,
            }
        };
        shared.update(|p| p.waiting = false);
        match command {
            Some(Command::Shutdown) => break,
            Some(command) => {
                idle = false;
                handle(&mut orch, command);
            }
            None => match orch.step() {
                Ok(StepOutcome::Worked(_)) => {}
                Ok(_) => idle = true,
                Err(e) => {
                    idle = true;
                    shared.update(|p| p.last_error = Some(e));
                }
            },
        }
        publish(&orch, &shared, false);
    }
    shared.update(|p| {
        p.stopped = true;
        p.waiting = false;
    });
    orch
}

fn handle(orch: &mut Orchestrator, command: Command) {
    // A caller that gave up waiting is not an error for the worker.
    match command {
        Command::Step(units, reply) => {
            let mut outcomes = Vec::new();
            let result = loop {
                if outcomes.len() >= units {
                    break Ok(outcomes);
                }
                match orch.step() {
                    Ok(outcome @ StepOutcome::Worked(_)) => outcomes.push(outcome),
                    Ok(outcome) => {
                        outcomes.push(outcome);
                        break Ok(outcomes);
                    }
                    Err(e) => break Err(e),
                }
            };
            let _ = reply.send(result);
        }
        Command::Seed(text, reply) => {
            let _ = reply.send(orch.seed(&text));
        }
        Command::Edit(edit, reply) => {
            let _ = reply.send(orch.apply_edit(edit));
        }
        Command::Restore(backup_id, reply) => {
            let _ = reply.send(orch.restore_backup(&backup_id));
        }
        Command::Shutdown => {}
    }
}
