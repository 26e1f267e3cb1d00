//! Rate scheduling over the logical clock: one priority queue of
//! `(next_fire_time, task)` with ties broken by the fixed task order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

/// Logical clock resolution: one tick is a microsecond.
pub const TICKS_PER_SECOND: u64 = 1_000_000;

/// Declaration order is the tie-break order at equal fire times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Plant,
    Lidar,
    Depth,
    Mission,
    Control,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Plant, Task::Lidar, Task::Depth, Task::Mission, Task::Control];

    /// Nominal rate in Hz.
    pub fn rate(self) -> u64 {
        match self {
            Task::Plant => 100,
            Task::Lidar | Task::Mission => 10,
            Task::Depth => 30,
            Task::Control => 20,
        }
    }

    /// Fire time of the `k`-th activation. The plant integrates up to its
    /// fire time, so its first activation is one step after zero. Rates that
    /// do not divide the clock round up, which keeps exactly three depth
    /// frames inside every LiDAR period.
    pub fn fire_time(self, k: u64) -> u64 {
        let k = if self == Task::Plant { k + 1 } else { k };
        (k * TICKS_PER_SECOND).div_ceil(self.rate())
    }
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    queue: BinaryHeap<Reverse<(u64, Task, u64)>>,
}

impl Default for Scheduler {
    fn default() -> Self {
        Self::new()
    }
}

impl Scheduler {
    pub fn new() -> Self {
        let queue = Task::ALL.iter().map(|&t| Reverse((t.fire_time(0), t, 0))).collect();
        Self { queue }
    }

    /// Next `(time, task, activation index)`; the task is rescheduled.
    pub fn pop(&mut self) -> (u64, Task, u64) {
        let Reverse((time, task, k)) = self.queue.pop().expect("every task is always queued");
        self.queue.push(Reverse((task.fire_time(k + 1), task, k + 1)));
        (time, task, k)
    }

    pub fn peek_time(&self) -> u64 {
        self.queue.peek().map(|Reverse((t, _, _))| *t).unwrap_or(u64::MAX)
    }
}

pub fn seconds(ticks: u64) -> f64 {
    ticks as f64 / TICKS_PER_SECOND as f64
}
