use std::collections::BTreeMap;
use std::sync::Arc;

use super::{ClassProfile, ExecutionBackend, ResourceModel, Visibility, Worker, WorkerDescriptor, WorkerId};

/// Every worker ever provisioned in a run, keyed by id. Ids are assigned in
/// provisioning order and sort the same way.
#[derive(Debug)]
pub struct Fleet {
    workers: BTreeMap<WorkerId, Worker>,
    resources: Arc<ResourceModel>,
    backend: Arc<dyn ExecutionBackend>,
    next: usize,
}

impl Fleet {
    pub fn new(resources: Arc<ResourceModel>, backend: Arc<dyn ExecutionBackend>) -> Self {
        Self { workers: BTreeMap::new(), resources, backend, next: 0 }
    }

    pub fn resources(&self) -> &Arc<ResourceModel> {
        &self.resources
    }

    /// Add a warming worker; the caller marks it ready when warm-up ends.
    pub fn provision(&mut self, profile: &ClassProfile, now: f64, visibility: Visibility) -> WorkerId {
        let id = format!("w{:03}", self.next);
        self.next += 1;
        let d = WorkerDescriptor::new(id.clone(), profile, now, visibility);
        let worker = Worker::new(d, Arc::clone(&self.resources), Arc::clone(&self.backend));
        self.workers.insert(id.clone(), worker);
        id
    }

    pub fn get(&self, id: &str) -> Option<&Worker> {
        self.workers.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Worker> {
        self.workers.get_mut(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Worker> {
        self.workers.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Worker> {
        self.workers.values_mut()
    }

    pub fn alive(&self) -> impl Iterator<Item = &Worker> {
        self.workers.values().filter(|w| w.is_alive())
    }

    pub fn alive_count(&self) -> usize {
        self.alive().count()
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }
}
