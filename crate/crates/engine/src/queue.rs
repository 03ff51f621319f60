//! Bounded FIFO between two pipeline stages, with a high-water mark.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_channel::{bounded, Receiver, RecvError, SendError, Sender};
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct QueueMeter {
    name: &'static str,
    capacity: usize,
    high_water: AtomicUsize,
    /// Length observed at the most recent send or receive.
    observed: AtomicUsize,
}

impl QueueMeter {
    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn high_water(&self) -> usize {
        self.high_water.load(Ordering::Relaxed)
    }

    /// Queue length as of the latest send or receive.
    pub fn len(&self) -> usize {
        self.observed.load(Ordering::Relaxed)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Current fill as a fraction of capacity.
    pub fn fill(&self) -> f64 {
        self.len() as f64 / self.capacity as f64
    }

    pub fn report(&self) -> QueueReport {
        QueueReport {
            name: self.name.to_string(),
            capacity: self.capacity,
            high_water: self.high_water(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueReport {
    pub name: String,
    pub capacity: usize,
    pub high_water: usize,
}

pub struct QueueTx<T> {
    tx: Sender<T>,
    meter: Arc<QueueMeter>,
}

impl<T> QueueTx<T> {
    /// Blocks while the queue is full. Fails only when the consumer is gone.
    pub fn send(&self, item: T) -> Result<(), SendError<T>> {
        self.tx.send(item)?;
        let n = self.tx.len();
        self.meter.observed.store(n, Ordering::Relaxed);
        self.meter.high_water.fetch_max(n, Ordering::Relaxed);
        Ok(())
    }

    pub fn meter(&self) -> &Arc<QueueMeter> {
        &self.meter
    }
}

pub struct QueueRx<T> {
    rx: Receiver<T>,
    meter: Arc<QueueMeter>,
}

impl<T> QueueRx<T> {
    /// Blocks for the next item; fails once the producer is gone and the
    /// queue is drained.
    pub fn recv(&self) -> Result<T, RecvError> {
        let item = self.rx.recv()?;
        self.meter.observed.store(self.rx.len(), Ordering::Relaxed);
        Ok(item)
    }

    pub fn meter(&self) -> &Arc<QueueMeter> {
        &self.meter
    }
}

impl<T> Iterator for &QueueRx<T> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        self.recv().ok()
    }
}

pub fn queue<T>(name: &'static str, capacity: usize) -> (QueueTx<T>, QueueRx<T>) {
    let (tx, rx) = bounded(capacity);
    let meter = Arc::new(QueueMeter {
        name,
        capacity,
        high_water: AtomicUsize::new(0),
        observed: AtomicUsize::new(0),
    });
    (
        QueueTx {
            tx,
            meter: meter.clone(),
        },
        QueueRx { rx, meter },
    )
}
