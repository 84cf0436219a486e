//! The round engine.
//!
//! Each round distributes `w_t`, runs every client's local SGD (in parallel,
//! one independent random stream per client), selects gradients according to
//! the strategy, then aggregates on a single thread in ascending client
//! order. Results therefore do not depend on the worker-thread count.

mod aggregate;
mod local;

use std::time::Instant;

use rayon::prelude::*;

pub use aggregate::{
    aggregate_bherd, aggregate_deltas, aggregate_fedavg, aggregate_fednova, aggregate_grab,
    refresh_client_control, refresh_server_control, GrabStep, NovaContribution,
};
pub use local::{LocalRun, LocalTrainer, DIVERGENCE_NORM};

use crate::config::{ExperimentConfig, Strategy};
use crate::data::{make_batches, partition, Dataset, DatasetShard};
use crate::error::{Error, Result};
use crate::metrics::{distance_to_mean, global_gradient, probe_round, RoundRecord};
use crate::models::{accuracy, shard_loss, LabelMap, SvmModel};
use crate::numerics::ParamVector;
use crate::selection::{
    grab_select, herding_order, select_all, GrabOutcome, GradientBuffer, SelectionOutcome,
};

/// Train and test sets for one experiment.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: Dataset,
    pub test: Dataset,
    pub label_map: LabelMap,
}

#[derive(Clone, Debug)]
pub struct ClientState {
    /// Zero-based client index.
    pub index: usize,
    pub shard: DatasetShard,
    /// `|D_i| / |D|`
    pub weight: f64,
    /// Control variate `c_i`; stays zero for strategies that do not use it.
    pub control: ParamVector,
}

#[derive(Clone, Debug)]
pub struct GlobalState {
    pub weights: ParamVector,
    /// Rounds completed so far.
    pub round: usize,
    pub strategy: Strategy,
    /// Server control variate `c`.
    pub control: ParamVector,
}

/// How a client's buffer was reduced to the vector sent to the server.
#[derive(Clone, Debug)]
pub enum ClientSelection {
    Full(SelectionOutcome),
    Herded(SelectionOutcome),
    Online(GrabOutcome),
}

impl ClientSelection {
    pub fn g(&self) -> &ParamVector {
        match self {
            ClientSelection::Full(o) | ClientSelection::Herded(o) => &o.g,
            ClientSelection::Online(o) => &o.g,
        }
    }

    pub fn indices(&self) -> &[usize] {
        match self {
            ClientSelection::Full(o) | ClientSelection::Herded(o) => &o.order,
            ClientSelection::Online(o) => &o.selected,
        }
    }
}

/// One client's work for a round.
#[derive(Clone, Debug)]
pub struct ClientRound {
    pub batches: Vec<Vec<usize>>,
    pub local: LocalRun,
    pub selection: ClientSelection,
    pub distance: Option<f64>,
    /// Batch gradients at the frozen `w_t` (probes only).
    pub frozen: Option<Vec<ParamVector>>,
}

/// Everything produced by one call to [`Federation::step`].
#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub start_weights: ParamVector,
    pub clients: Vec<ClientRound>,
    pub record: RoundRecord,
    /// `sum_i p_i * alpha_i` for online selection.
    pub grab_alpha: Option<f64>,
}

/// A federation of clients with their shards and the global model.
pub struct Federation<'a> {
    cfg: ExperimentConfig,
    data: &'a ExperimentData,
    clients: Vec<ClientState>,
    global: GlobalState,
    pool: rayon::ThreadPool,
}

impl<'a> Federation<'a> {
    pub fn new(cfg: &ExperimentConfig, data: &'a ExperimentData) -> Result<Self> {
        cfg.validate()?;
        let shards = partition(&data.train, cfg.clients, cfg.case, cfg.seed)?;
        let total = data.train.len() as f64;
        let dim = data.train.dim() + 1;
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(index, shard)| ClientState {
                index,
                weight: shard.len() as f64 / total,
                shard,
                control: ParamVector::zeros(dim),
            })
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Logic(format!("thread pool: {e}")))?;
        Ok(Federation {
            cfg: cfg.clone(),
            data,
            clients,
            global: GlobalState {
                weights: ParamVector::zeros(dim),
                round: 0,
                strategy: cfg.strategy,
                control: ParamVector::zeros(dim),
            },
            pool,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn global(&self) -> &GlobalState {
        &self.global
    }

    pub fn client_weights(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.weight).collect()
    }

    pub fn trainer(&self) -> LocalTrainer<'a> {
        LocalTrainer {
            dataset: &self.data.train,
            label_map: self.data.label_map,
            lr: self.cfg.lr,
            lambda: self.cfg.lambda,
        }
    }

    pub fn model(&self) -> SvmModel {
        SvmModel::new(self.global.weights.clone(), self.cfg.lambda)
    }

    fn client_round(&self, client: &ClientState, round: usize) -> Result<ClientRound> {
        let cfg = &self.cfg;
        let w_t = &self.global.weights;
        let trainer = self.trainer();
        let batches = make_batches(
            &client.shard,
            cfg.batch,
            cfg.epochs,
            cfg.rr,
            cfg.seed,
            round,
        )?;
        let correction = if cfg.strategy.uses_control_variates() {
            Some(self.global.control.sub(&client.control)?)
        } else {
            None
        };
        let local = trainer.run(
            w_t,
            &batches,
            correction.as_ref(),
            cfg.probes,
            round,
            client.index + 1,
        )?;
        let buf = &local.buffer;
        let selection = match cfg.strategy {
            s if s.herds() => ClientSelection::Herded(herding_order(buf, cfg.alpha)?),
            Strategy::Grab => ClientSelection::Online(grab_select(buf.grads(), buf.len())?),
            _ => ClientSelection::Full(select_all(buf)?),
        };
        let k = selection.indices().len();
        let distance = if k > 0 {
            Some(distance_to_mean(selection.g(), k, buf)?)
        } else {
            None
        };
        let frozen = if cfg.probes {
            Some(
                batches
                    .iter()
                    .map(|b| trainer.gradient(w_t, b))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(ClientRound {
            batches,
            local,
            selection,
            distance,
            frozen,
        })
    }

    /// Runs one global round and advances `w_t`.
    pub fn step(&mut self) -> Result<RoundOutput> {
        let started = Instant::now();
        let round = self.global.round + 1;
        let cfg = self.cfg.clone();
        let weights = self.client_weights();

        let results: Vec<Result<ClientRound>> = {
            let this = &*self;
            this.pool.install(|| {
                this.clients
                    .par_iter()
                    .map(|c| this.client_round(c, round))
                    .collect()
            })
        };
        let clients = results.into_iter().collect::<Result<Vec<_>>>()?;

        let w_t = self.global.weights.clone();
        let mut grab_alpha = None;
        let next = match cfg.strategy {
            Strategy::FedAvg | Strategy::Centralized => {
                let buffers: Vec<GradientBuffer> =
                    clients.iter().map(|c| c.local.buffer.clone()).collect();
                aggregate_fedavg(&w_t, &buffers, &weights, cfg.lr)?
            }
            Strategy::BHerd | Strategy::ScaffoldBHerd => {
                let outcomes = herded_outcomes(&clients)?;
                aggregate_bherd(&w_t, &outcomes, &weights, cfg.lr, cfg.alpha, cfg.epochs)?
            }
            Strategy::Grab => {
                let outcomes: Vec<GrabOutcome> = clients
                    .iter()
                    .map(|c| match &c.selection {
                        ClientSelection::Online(o) => Ok(o.clone()),
                        _ => Err(Error::Logic("expected online selection".into())),
                    })
                    .collect::<Result<_>>()?;
                let step = aggregate_grab(&w_t, &outcomes, &weights, cfg.lr)?;
                grab_alpha = Some(step.alpha_t);
                step.weights
            }
            Strategy::FedNova => {
                let contributions: Vec<NovaContribution> = clients
                    .iter()
                    .map(|c| NovaContribution {
                        g: c.selection.g().clone(),
                        steps: c.local.buffer.len(),
                    })
                    .collect();
                aggregate_fednova(&w_t, &contributions, &weights, cfg.lr, 1.0)?
            }
            Strategy::FedNovaBHerd => {
                let contributions: Vec<NovaContribution> = clients
                    .iter()
                    .map(|c| NovaContribution {
                        g: c.selection.g().clone(),
                        steps: c.selection.indices().len(),
                    })
                    .collect();
                aggregate_fednova(
                    &w_t,
                    &contributions,
                    &weights,
                    cfg.lr,
                    cfg.epochs / cfg.alpha,
                )?
            }
            Strategy::Scaffold => {
                let finals: Vec<ParamVector> = clients
                    .iter()
                    .map(|c| c.local.final_weights.clone())
                    .collect();
                aggregate_deltas(&w_t, &finals, &weights)?
            }
        };

        if cfg.strategy.uses_control_variates() {
            let old: Vec<ParamVector> = self.clients.iter().map(|c| c.control.clone()).collect();
            let mut new = Vec::with_capacity(old.len());
            for (state, cr) in self.clients.iter().zip(&clients) {
                new.push(refresh_client_control(
                    &state.control,
                    &self.global.control,
                    &w_t,
                    &cr.local.final_weights,
                    cr.local.buffer.len(),
                    cfg.lr,
                )?);
            }
            self.global.control = refresh_server_control(&self.global.control, &old, &new)?;
            for (state, c) in self.clients.iter_mut().zip(new) {
                state.control = c;
            }
        }

        let norm = next.l2_norm()?;
        if norm > DIVERGENCE_NORM {
            return Err(Error::Round {
                round,
                client: 0,
                step: 0,
                detail: format!("global weights diverged (norm {norm:e})"),
            });
        }

        let (delta, sigma2, grad_norm_sq) = if cfg.probes {
            let trajectories: Vec<Vec<ParamVector>> = clients
                .iter()
                .map(|c| c.local.trajectory.clone().unwrap_or_default())
                .collect();
            let frozen: Vec<Vec<ParamVector>> = clients
                .iter()
                .map(|c| c.frozen.clone().unwrap_or_default())
                .collect();
            let (d, s) = probe_round(&w_t, &trajectories, &frozen)?;
            let g = global_gradient(&frozen, &weights)?;
            (Some(d), Some(s), Some(g.norm_sq()))
        } else {
            (None, None, None)
        };

        self.global.weights = next;
        self.global.round = round;

        let model = self.model();
        let mut loss = 0.0;
        for c in &self.clients {
            loss += c.weight * shard_loss(&model, &self.data.train, &c.shard, self.data.label_map)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("global loss".into()));
        }
        let acc = accuracy(&model, &self.data.test, self.data.label_map)?;

        let record = RoundRecord {
            round,
            loss,
            accuracy: acc,
            distance: clients.iter().map(|c| c.distance).collect(),
            selected: clients
                .iter()
                .map(|c| c.selection.indices().to_vec())
                .collect(),
            delta,
            sigma2,
            grad_norm_sq,
            wall_time: started.elapsed(),
        };
        Ok(RoundOutput {
            start_weights: w_t,
            clients,
            record,
            grab_alpha,
        })
    }
}

fn herded_outcomes(clients: &[ClientRound]) -> Result<Vec<SelectionOutcome>> {
    clients
        .iter()
        .map(|c| match &c.selection {
            ClientSelection::Herded(o) => Ok(o.clone()),
            _ => Err(Error::Logic("expected herded selection".into())),
        })
        .collect()
}

/// Records and final weights of a complete run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub records: Vec<RoundRecord>,
    pub final_weights: ParamVector,
}

/// Runs `cfg.rounds` rounds from zero-initialized weights.
pub fn run_experiment(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<RunResult> {
    let mut fed = Federation::new(cfg, data)?;
    let mut records = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        records.push(fed.step()?.record);
    }
    Ok(RunResult {
        records,
        final_weights: fed.global.weights,
    })
}
