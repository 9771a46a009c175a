use serde::Serialize;

use crate::events::{Event, EventLog};
use crate::worker::{Fleet, WorkerDescriptor, WorkerId, WorkerStatus};

use super::{ControlError, ControlPlane, DedupGroup};

/// Fleet changes made by one autoscaler pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScaleDelta {
    /// New workers and the time each becomes ready.
    pub provisioned: Vec<(WorkerId, f64)>,
    pub retired: Vec<WorkerId>,
}

impl ControlPlane {
    fn could_host(&self, desc: &WorkerDescriptor, g: &DedupGroup) -> bool {
        desc.satisfies(g.spec.resource_class)
            && g.admitted_by(&desc.tenant_visibility)
            && self
                .memory_requirement(&g.spec, &g.signature, 1, desc.resource_class)
                .is_some_and(|m| m <= desc.vram_bytes)
    }

    /// Provision when a signature's backlog outgrows the workers able to run
    /// it; retire workers idle past the timeout.
    pub fn autoscale_tick(&mut self, now: f64, fleet: &mut Fleet, log: &mut EventLog) -> ScaleDelta {
        let mut delta = ScaleDelta::default();
        if !self.config.elastic() {
            return delta;
        }
        let cfg = self.config.autoscale.clone();
        let backlog: Vec<(crate::digest::ExecSignature, usize, u64)> = self
            .pool
            .iter()
            .filter_map(|(sig, set)| set.first().map(|(_, t)| (*sig, set.len(), *t)))
            .collect();
        for (sig, pending, head) in backlog {
            let g = &self.groups[&head];
            let capacity = fleet.alive().filter(|w| self.could_host(&w.descriptor, g)).count();
            if capacity > 0 && (pending as f64) / (capacity as f64) <= cfg.pending_ratio {
                continue;
            }
            let choice = self
                .config
                .pool
                .iter()
                .filter(|p| fleet.alive().filter(|w| w.class() == p.profile.class).count() < p.max_count)
                .filter(|p| {
                    let probe = WorkerDescriptor::new(String::new(), &p.profile, now, p.visibility.clone());
                    self.could_host(&probe, g)
                })
                .min_by(|a, b| a.profile.cost_rate.total_cmp(&b.profile.cost_rate).then(a.profile.class.cmp(&b.profile.class)))
                .cloned();
            let Some(entry) = choice else { continue };
            let ready_at = now + cfg.warmup_s;
            let id = fleet.provision(&entry.profile, now, entry.visibility.clone());
            log.record(now, Event::ScaleUp { signature: sig, class: entry.profile.class, pending, capacity });
            log.record(now, Event::WorkerProvisioned {
                worker: id.clone(),
                class: entry.profile.class,
                cost_rate: entry.profile.cost_rate,
                idle_power_w: entry.profile.idle_power_watts,
                peak_power_w: entry.profile.peak_power_watts,
                ready_at,
            });
            delta.provisioned.push((id, ready_at));
        }

        let mut idle: Vec<(f64, WorkerId, f64)> = fleet
            .iter()
            .filter(|w| w.status() == WorkerStatus::Active && w.queue_depth() == 0 && now - w.idle_since() >= cfg.idle_timeout_s)
            .map(|w| (w.descriptor.cost_rate, w.id().to_string(), w.idle_since()))
            .collect();
        idle.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        for (_, id, since) in idle {
            if fleet.alive_count() <= cfg.min_workers {
                break;
            }
            fleet.get_mut(&id).expect("listed").drain(now);
            self.last_heartbeat.remove(&id);
            log.record(now, Event::WorkerRetired { worker: id.clone(), idle_since: since });
            delta.retired.push(id);
        }
        delta
    }

    /// A provisioned worker finished warming up and joins the schedulable fleet.
    pub fn on_worker_ready(&mut self, worker: &str, now: f64, fleet: &mut Fleet, log: &mut EventLog) -> Result<(), ControlError> {
        let w = fleet.get_mut(worker).ok_or_else(|| ControlError::UnknownWorker(worker.to_string()))?;
        if w.status() != WorkerStatus::Warming {
            return Err(ControlError::UnknownWorker(worker.to_string()));
        }
        w.mark_ready(now);
        self.register_worker(worker, now);
        log.record(now, Event::WorkerReady { worker: worker.to_string() });
        Ok(())
    }
}
