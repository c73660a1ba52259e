use super::{InteractionLog, PeriodSplit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activity {
    /// Interacted in the previous window, so the previous model holds
    /// fresh information about the node.
    Active,
    /// Known from before the previous window but silent during it.
    Inactive,
    /// First interaction falls in the current window.
    New,
}

/// Labels of every user and item known by the end of a period.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeActivity {
    pub users: Vec<Activity>,
    pub items: Vec<Activity>,
}

impl NodeActivity {
    pub fn count(&self, label: Activity) -> (usize, usize) {
        (
            self.users.iter().filter(|&&a| a == label).count(),
            self.items.iter().filter(|&&a| a == label).count(),
        )
    }
}

/// Classifies nodes for period `period`; the window before period 0 is the
/// warm-up.
pub fn classify_nodes(log: &InteractionLog, split: &PeriodSplit, period: usize) -> NodeActivity {
    let (users_before, items_before) = split.known_before(period);
    let (users_now, items_now) = split.known_after(period);
    let previous = if period == 0 {
        split.warmup_records(log)
    } else {
        split.period_records(log, period - 1)
    };
    let mut user_prev = vec![false; users_now];
    let mut item_prev = vec![false; items_now];
    for r in previous {
        user_prev[r.user] = true;
        item_prev[r.item] = true;
    }
    let label = |id: usize, before: usize, prev: &[bool]| {
        if id >= before {
            Activity::New
        } else if prev[id] {
            Activity::Active
        } else {
            Activity::Inactive
        }
    };
    NodeActivity {
        users: (0..users_now).map(|u| label(u, users_before, &user_prev)).collect(),
        items: (0..items_now).map(|i| label(i, items_before, &item_prev)).collect(),
    }
}
