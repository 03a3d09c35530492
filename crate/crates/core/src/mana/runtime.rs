use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::budget::{assign_budgets, BudgetCandidate, BudgetPolicy, RankBy};
use super::{distribute, RegionGridConfig, RegionIndex, Snapshot};
use crate::ingest::ColoredPointBatch;
use crate::models::{AnyModel, Learner, ModelConfig, ModelKind, TrainBatch};
use crate::numerics::{AdamConfig, AdamState};
use crate::{Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 256;

/// How agents' training iterations are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    /// Worker threads train concurrently with feeding.
    Threaded { executors: usize },
    /// No threads; outstanding budgets run on the caller's thread, agent by
    /// agent in region order, when [`ManaRuntime::settle`] is called.
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    pub grid: RegionGridConfig,
    pub model: ModelConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub budget: BudgetPolicy,
    pub seed: u64,
    pub scheduler: Scheduler,
    /// Cap on stored slices per agent; beyond it, reservoir sampling keeps a
    /// uniform subset of everything fed.
    pub memory_cap: Option<usize>,
}

impl RuntimeConfig {
    pub fn new(grid: RegionGridConfig, kind: ModelKind) -> Self {
        RuntimeConfig {
            grid,
            model: ModelConfig::default_for(kind),
            adam: AdamConfig::default(),
            batch_size: DEFAULT_BATCH_SIZE,
            budget: BudgetPolicy::default(),
            seed: 0,
            scheduler: Scheduler::Threaded {
                executors: default_executors(),
            },
            memory_cap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if let Scheduler::Threaded { executors: 0 } = self.scheduler {
            return Err(Error::Config("executor count must be positive".into()));
        }
        if self.memory_cap == Some(0) {
            return Err(Error::Config("memory cap must be positive".into()));
        }
        self.model.grid().validate()
    }
}

pub fn default_executors() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Training,
    Evaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrainPolicy {
    /// Wait until every budget is spent.
    Drain { timeout: Duration },
    /// Stop after in-flight iterations; unspent budget is kept for
    /// [`ManaRuntime::resume`].
    PauseNow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedAck {
    pub routed: BTreeMap<RegionIndex, usize>,
    /// Indices of points outside the bounding box.
    pub rejected: Vec<usize>,
    pub spawned: Vec<RegionIndex>,
    pub grants: BTreeMap<RegionIndex, u64>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStats {
    pub region: RegionIndex,
    pub executor: Option<usize>,
    pub budget: u64,
    pub granted: u64,
    pub consumed: u64,
    pub trained_iters: u64,
    pub skipped: u64,
    pub errors: u64,
    pub memory_slices: usize,
    pub memory_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BudgetAccounting {
    pub granted: u64,
    pub consumed: u64,
    pub outstanding: u64,
}

type AgentLearner = Learner<f32, AnyModel<f32>>;

#[derive(Debug)]
struct Inbox {
    memory: Vec<Arc<TrainBatch<f32>>>,
    slices_seen: u64,
    reservoir_rng: ChaCha8Rng,
    budget: u64,
    granted: u64,
    consumed: u64,
    trained: u64,
    skipped: u64,
    errors: u64,
}

#[derive(Debug)]
struct Agent {
    region: RegionIndex,
    executor: Option<usize>,
    inbox: Mutex<Inbox>,
    /// Built lazily on the training side so feeding never pays for model
    /// initialisation.
    learner: Mutex<Option<AgentLearner>>,
    losses: Mutex<Vec<f32>>,
}

#[derive(Debug, Default)]
struct Control {
    paused: bool,
    shutdown: bool,
    in_flight: usize,
    epoch: u64,
}

#[derive(Debug)]
struct Shared {
    config: RuntimeConfig,
    agents: RwLock<BTreeMap<RegionIndex, Arc<Agent>>>,
    assignments: Vec<RwLock<Vec<Arc<Agent>>>>,
    control: Mutex<Control>,
    work: Condvar,
    idle: Condvar,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Per-region random stream so that results do not depend on spawn order.
fn region_rng(seed: u64, region: RegionIndex, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [x, y, z] = region.as_array().map(u64::from);
    rng.set_stream((x << 42 | y << 21 | z) << 1 | purpose);
    rng
}

/// Fresh model, optimiser and sampling stream for `region`.
pub fn initial_learner(config: &RuntimeConfig, region: RegionIndex) -> Result<AgentLearner> {
    let mut rng = region_rng(config.seed, region, 0);
    let model: AnyModel<f32> = config.model.build(&mut rng)?;
    let optimizer = AdamState::for_params(config.adam, &model);
    Ok(Learner::new(model, optimizer, rng, config.batch_size))
}

impl Agent {
    fn new(config: &RuntimeConfig, region: RegionIndex, executor: Option<usize>) -> Self {
        Agent {
            region,
            executor,
            inbox: Mutex::new(Inbox {
                memory: Vec::new(),
                slices_seen: 0,
                reservoir_rng: region_rng(config.seed, region, 1),
                budget: 0,
                granted: 0,
                consumed: 0,
                trained: 0,
                skipped: 0,
                errors: 0,
            }),
            learner: Mutex::new(None),
            losses: Mutex::new(Vec::new()),
        }
    }

    fn stats(&self) -> AgentStats {
        let ib = lock(&self.inbox);
        AgentStats {
            region: self.region,
            executor: self.executor,
            budget: ib.budget,
            granted: ib.granted,
            consumed: ib.consumed,
            trained_iters: ib.trained,
            skipped: ib.skipped,
            errors: ib.errors,
            memory_slices: ib.memory.len(),
            memory_points: ib.memory.iter().map(|b| b.len()).sum(),
        }
    }

    /// Takes one unit of budget if there is work, returning the memory to
    /// sample from.
    fn claim(&self) -> Option<Vec<Arc<TrainBatch<f32>>>> {
        let mut ib = lock(&self.inbox);
        if ib.budget == 0 || ib.memory.is_empty() {
            return None;
        }
        ib.budget -= 1;
        ib.consumed += 1;
        Some(ib.memory.clone())
    }

    fn train_once(&self, config: &RuntimeConfig, memory: &[Arc<TrainBatch<f32>>]) {
        let mut slot = lock(&self.learner);
        if slot.is_none() {
            match initial_learner(config, self.region) {
                Ok(l) => *slot = Some(l),
                Err(e) => {
                    log::error!("agent {}: cannot initialise model: {e}", self.region);
                    lock(&self.inbox).errors += 1;
                    return;
                }
            }
        }
        let learner = slot.as_mut().expect("initialised above");
        let outcome = learner.step(memory);
        drop(slot);
        let mut ib = lock(&self.inbox);
        match outcome {
            Ok(Some(loss)) => {
                ib.trained += 1;
                drop(ib);
                lock(&self.losses).push(loss);
            }
            Ok(None) => {
                ib.trained += 1;
                ib.skipped += 1;
            }
            Err(e) => {
                ib.errors += 1;
                log::error!("agent {}: training step failed: {e}", self.region);
            }
        }
    }

    fn model_copy(&self, config: &RuntimeConfig) -> Result<AnyModel<f32>> {
        let mut slot = lock(&self.learner);
        if slot.is_none() {
            *slot = Some(initial_learner(config, self.region)?);
        }
        Ok(slot.as_ref().expect("initialised above").model.clone())
    }

    fn append(&self, slice: Arc<TrainBatch<f32>>, cap: Option<usize>) {
        let mut ib = lock(&self.inbox);
        ib.slices_seen += 1;
        match cap {
            Some(cap) if ib.memory.len() >= cap => {
                let seen = ib.slices_seen;
                let j = ib.reservoir_rng.gen_range(0..seen);
                if (j as usize) < cap {
                    ib.memory[j as usize] = slice;
                }
            }
            _ => ib.memory.push(slice),
        }
    }
}

fn executor_loop(shared: Arc<Shared>, id: usize) {
    let mut seen_epoch = 0;
    loop {
        {
            let mut ctl = lock(&shared.control);
            while !ctl.shutdown && (ctl.paused || ctl.epoch == seen_epoch) {
                ctl = shared.work.wait(ctl).unwrap_or_else(|e| e.into_inner());
            }
            if ctl.shutdown {
                return;
            }
            seen_epoch = ctl.epoch;
        }
        // Round-robin over this executor's agents, one iteration each, until
        // no agent has work left.
        loop {
            let agents: Vec<Arc<Agent>> = shared.assignments[id]
                .read()
                .unwrap_or_else(|e| e.into_inner())
                .clone();
            let mut did_work = false;
            for agent in &agents {
                {
                    let mut ctl = lock(&shared.control);
                    if ctl.paused || ctl.shutdown {
                        break;
                    }
                    ctl.in_flight += 1;
                }
                if let Some(memory) = agent.claim() {
                    agent.train_once(&shared.config, &memory);
                    did_work = true;
                }
                lock(&shared.control).in_flight -= 1;
                shared.idle.notify_all();
            }
            if !did_work {
                break;
            }
        }
    }
}

/// The set of region agents plus the distribution context that feeds them.
pub struct ManaRuntime {
    shared: Arc<Shared>,
    mode: Mode,
    workers: Vec<JoinHandle<()>>,
    next_executor: usize,
    policy: BudgetPolicy,
}

impl std::fmt::Debug for ManaRuntime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManaRuntime")
            .field("mode", &self.mode)
            .field("agents", &self.agent_count())
            .finish()
    }
}

impl ManaRuntime {
    pub fn new(config: RuntimeConfig) -> Result<Self> {
        config.validate()?;
        let policy = config.budget;
        let executors = match config.scheduler {
            Scheduler::Threaded { executors } => executors,
            Scheduler::Deterministic => 0,
        };
        let shared = Arc::new(Shared {
            config,
            agents: RwLock::new(BTreeMap::new()),
            assignments: (0..executors).map(|_| RwLock::new(Vec::new())).collect(),
            control: Mutex::new(Control::default()),
            work: Condvar::new(),
            idle: Condvar::new(),
        });
        let workers = (0..executors)
            .map(|id| {
                let s = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(format!("mana-exec-{id}"))
                    .spawn(move || executor_loop(s, id))
                    .map_err(|e| Error::State(format!("cannot spawn executor: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ManaRuntime {
            policy,
            shared,
            mode: Mode::Training,
            workers,
            next_executor: 0,
        })
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.shared.config
    }

    pub fn budget_policy(&self) -> BudgetPolicy {
        self.policy
    }

    /// Applies to grants made by subsequent feeds.
    pub fn set_budget_policy(&mut self, policy: BudgetPolicy) {
        self.policy = policy;
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn agent_count(&self) -> usize {
        self.shared
            .agents
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .len()
    }

    pub fn regions(&self) -> Vec<RegionIndex> {
        self.agents().keys().copied().collect()
    }

    fn agents(&self) -> BTreeMap<RegionIndex, Arc<Agent>> {
        self.shared
            .agents
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn stats(&self) -> Vec<AgentStats> {
        self.agents().values().map(|a| a.stats()).collect()
    }

    /// Per-iteration losses recorded by `region`'s agent.
    pub fn loss_history(&self, region: RegionIndex) -> Vec<f32> {
        self.agents()
            .get(&region)
            .map(|a| lock(&a.losses).clone())
            .unwrap_or_default()
    }

    pub fn accounting(&self) -> BudgetAccounting {
        let mut acc = BudgetAccounting::default();
        for a in self.agents().values() {
            let ib = lock(&a.inbox);
            acc.granted += ib.granted;
            acc.consumed += ib.consumed;
            acc.outstanding += ib.budget;
        }
        acc
    }

    /// Routes a frame to its agents, spawning agents for new regions, and
    /// grants training budget. Never waits for training.
    pub fn feed_frame(&mut self, batch: &ColoredPointBatch) -> Result<FeedAck> {
        let start = Instant::now();
        if self.mode != Mode::Training {
            return Err(Error::State(
                "cannot feed while in evaluation mode; resume training first".into(),
            ));
        }
        let dist = distribute(&self.shared.config.grid, batch);
        if !dist.rejected.is_empty() {
            log::warn!(
                "{} of {} points fell outside the bounding box",
                dist.rejected.len(),
                batch.len()
            );
        }
        let mut spawned = Vec::new();
        let mut routed = BTreeMap::new();
        {
            let mut registry = self
                .shared
                .agents
                .write()
                .unwrap_or_else(|e| e.into_inner());
            for region in dist.batches.keys() {
                if !registry.contains_key(region) {
                    let executor = (!self.shared.assignments.is_empty()).then(|| {
                        let e = self.next_executor % self.shared.assignments.len();
                        self.next_executor += 1;
                        e
                    });
                    let agent = Arc::new(Agent::new(&self.shared.config, *region, executor));
                    if let Some(e) = executor {
                        self.shared.assignments[e]
                            .write()
                            .unwrap_or_else(|e| e.into_inner())
                            .push(Arc::clone(&agent));
                    }
                    registry.insert(*region, agent);
                    spawned.push(*region);
                }
            }
        }
        let agents = self.agents();
        for (region, sub) in dist.batches {
            routed.insert(region, sub.len());
            agents[&region].append(Arc::new(sub), self.shared.config.memory_cap);
        }

        let policy = self.policy;
        let candidates: Vec<BudgetCandidate> = agents
            .values()
            .map(|a| {
                let ib = lock(&a.inbox);
                BudgetCandidate {
                    region: a.region,
                    progress: match policy.rank_by {
                        RankBy::Granted => ib.granted,
                        RankBy::Trained => ib.trained,
                    },
                    touched: routed.contains_key(&a.region),
                }
            })
            .collect();
        let grants = assign_budgets(&candidates, policy.quota);
        for (region, &g) in &grants {
            let mut ib = lock(&agents[region].inbox);
            ib.budget += g;
            ib.granted += g;
        }
        {
            let mut ctl = lock(&self.shared.control);
            ctl.epoch += 1;
        }
        self.shared.work.notify_all();
        Ok(FeedAck {
            routed,
            rejected: dist.rejected,
            spawned,
            grants,
            elapsed: start.elapsed(),
        })
    }

    fn is_idle(&self, ctl: &Control) -> bool {
        ctl.in_flight == 0
            && self.agents().values().all(|a| {
                let ib = lock(&a.inbox);
                ib.budget == 0 || ib.memory.is_empty()
            })
    }

    fn backlog(&self) -> Vec<(RegionIndex, u64)> {
        self.agents()
            .values()
            .map(|a| (a.region, lock(&a.inbox).budget))
            .filter(|&(_, b)| b > 0)
            .collect()
    }

    /// Runs (deterministic scheduler) or waits for (threaded scheduler) all
    /// outstanding budget.
    pub fn settle(&mut self, timeout: Duration) -> Result<()> {
        if self.mode != Mode::Training {
            return Ok(());
        }
        if self.workers.is_empty() {
            for agent in self.agents().values() {
                while let Some(memory) = agent.claim() {
                    agent.train_once(&self.shared.config, &memory);
                }
            }
            return Ok(());
        }
        let deadline = Instant::now() + timeout;
        let mut ctl = lock(&self.shared.control);
        while !self.is_idle(&ctl) {
            let now = Instant::now();
            if now >= deadline {
                drop(ctl);
                return Err(Error::Timeout(self.backlog()));
            }
            let (g, _) = self
                .shared
                .idle
                .wait_timeout(ctl, (deadline - now).min(Duration::from_millis(50)))
                .unwrap_or_else(|e| e.into_inner());
            ctl = g;
        }
        Ok(())
    }

    fn pause_workers(&self) {
        let mut ctl = lock(&self.shared.control);
        ctl.paused = true;
        while ctl.in_flight > 0 {
            ctl = self
                .shared
                .idle
                .wait(ctl)
                .unwrap_or_else(|e| e.into_inner());
        }
    }

    /// Stops training, copies every agent's parameters and switches to
    /// evaluation mode. On drain timeout the runtime stays in training mode
    /// and the per-agent backlog is returned in the error.
    pub fn quiesce_and_snapshot(&mut self, policy: DrainPolicy) -> Result<Snapshot> {
        if self.mode != Mode::Training {
            return Err(Error::State("already in evaluation mode".into()));
        }
        if let DrainPolicy::Drain { timeout } = policy {
            self.settle(timeout)?;
        }
        self.pause_workers();
        self.mode = Mode::Evaluation;
        self.snapshot()
    }

    /// Parameter copy of every agent. Only valid while no worker trains.
    fn snapshot(&self) -> Result<Snapshot> {
        let mut models = BTreeMap::new();
        let mut trained_iters = BTreeMap::new();
        for (region, agent) in self.agents() {
            models.insert(region, agent.model_copy(&self.shared.config)?);
            trained_iters.insert(region, lock(&agent.inbox).trained);
        }
        Ok(Snapshot {
            grid: self.shared.config.grid,
            models,
            trained_iters,
        })
    }

    /// Returns to training mode; unspent budget resumes.
    pub fn resume(&mut self) {
        self.mode = Mode::Training;
        let mut ctl = lock(&self.shared.control);
        ctl.paused = false;
        ctl.epoch += 1;
        drop(ctl);
        self.shared.work.notify_all();
    }
}

impl Drop for ManaRuntime {
    fn drop(&mut self) {
        lock(&self.shared.control).shutdown = true;
        self.shared.work.notify_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
