//! Per-node social awareness: community-density and social-tie tables with
//! windowed exponential smoothing.
//!
//! Contacts increment plain counters inside the open time window. At each
//! window boundary the counters fold into a prediction:
//!
//! ```text
//! predicted <- (1 - factor) * predicted * gamma^k + factor * count   (count > 0)
//! predicted <- predicted * gamma^k                                   (count = 0)
//! ```
//!
//! where `factor` is alpha for densities and beta for ties, and `k` counts
//! whole windows since the record's last fold, so records untouched for
//! several windows decay in one step exactly as if they had been folded
//! every window. Reads are pure and expose mid-window activity as
//! `predicted * gamma^k + factor * count`: the open count contributes at
//! its prediction weight without re-dampening the prediction, so one extra
//! contact can never lower the value forwarding compares.

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::trace::NodeId;
use crate::tree::{CommunityId, InterestTree, TreeError};

/// Smoothing parameters shared by every node in a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocialParams {
    /// Density prediction factor, in [0, 1].
    pub alpha: f64,
    /// Social-tie prediction factor, in [0, 1].
    pub beta: f64,
    /// Evaporation factor per elapsed window, in (0, 1].
    pub gamma: f64,
    /// Window length in seconds.
    pub window_secs: f64,
}

impl SocialParams {
    pub fn validate(&self) -> Result<(), SocialError> {
        if !(0.0..=1.0).contains(&self.alpha)
            || !(0.0..=1.0).contains(&self.beta)
            || !(self.gamma > 0.0 && self.gamma <= 1.0)
            || !(self.window_secs > 0.0)
        {
            return Err(SocialError::BadParams(*self));
        }
        Ok(())
    }
}

impl Default for SocialParams {
    fn default() -> Self {
        SocialParams {
            alpha: 0.7,
            beta: 0.1,
            gamma: 0.9,
            window_secs: 30.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum SocialError {
    #[error("invalid social parameters: {0:?}")]
    BadParams(SocialParams),
    #[error("node {0} contacted itself")]
    SelfContact(NodeId),
    #[error("window {requested} precedes current window {current}")]
    WindowRanBackwards { requested: u64, current: u64 },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// One smoothed counter: prediction, open-window count, and the window
/// index of the last fold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EwmaRecord {
    pub predicted: f64,
    pub current_count: u64,
    pub last_update_window: u64,
}

impl EwmaRecord {
    fn fresh(window: u64) -> Self {
        EwmaRecord {
            predicted: 0.0,
            current_count: 0,
            last_update_window: window,
        }
    }

    fn fold(&mut self, factor: f64, gamma: f64, window: u64) {
        let k = (window - self.last_update_window) as i32;
        if self.current_count > 0 {
            self.predicted = (1.0 - factor) * self.predicted * gamma.powi(k)
                + factor * self.current_count as f64;
        } else {
            self.predicted *= gamma.powi(k);
        }
        self.current_count = 0;
        self.last_update_window = window;
    }

    fn read(&self, factor: f64, gamma: f64, window: u64) -> f64 {
        let k = (window - self.last_update_window) as i32;
        self.predicted * gamma.powi(k) + factor * self.current_count as f64
    }
}

/// One node's view of community densities and peer ties. Owned and mutated
/// by a single event loop; never shared across nodes.
#[derive(Debug, Clone)]
pub struct SocialState {
    owner: NodeId,
    params: SocialParams,
    window: u64,
    density: BTreeMap<CommunityId, EwmaRecord>,
    ties: BTreeMap<NodeId, EwmaRecord>,
}

impl SocialState {
    pub fn new(owner: NodeId, params: SocialParams) -> Self {
        SocialState {
            owner,
            params,
            window: 0,
            density: BTreeMap::new(),
            ties: BTreeMap::new(),
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn params(&self) -> &SocialParams {
        &self.params
    }

    pub fn current_window(&self) -> u64 {
        self.window
    }

    /// Records a link-up with `peer`. The tie counter increments only when
    /// owner and peer share a major interest; density counters increment for
    /// every community on the peer's path to the root. Records are created
    /// lazily at zero before the first increment.
    pub fn on_contact(
        &mut self,
        peer: NodeId,
        peer_community: CommunityId,
        tree: &InterestTree,
        now: f64,
    ) -> Result<(), SocialError> {
        if peer == self.owner {
            return Err(SocialError::SelfContact(peer));
        }
        debug_assert!(
            now >= self.window as f64 * self.params.window_secs,
            "contact at t={now} precedes window {}",
            self.window
        );
        let owner_community = self.which_community(tree);
        if owner_community == Some(peer_community) {
            let window = self.window;
            self.ties
                .entry(peer)
                .or_insert_with(|| EwmaRecord::fresh(window))
                .current_count += 1;
        }
        for community in tree.path_to_root(peer_community)? {
            let window = self.window;
            self.density
                .entry(community)
                .or_insert_with(|| EwmaRecord::fresh(window))
                .current_count += 1;
        }
        Ok(())
    }

    fn which_community(&self, tree: &InterestTree) -> Option<CommunityId> {
        tree.major_of(self.owner)
    }

    /// Folds every record at a window boundary. `window_index` is the index
    /// of the window being entered; it must not precede the current one.
    pub fn evaporate(&mut self, window_index: u64) -> Result<(), SocialError> {
        if window_index < self.window {
            return Err(SocialError::WindowRanBackwards {
                requested: window_index,
                current: self.window,
            });
        }
        let SocialParams {
            alpha, beta, gamma, ..
        } = self.params;
        for rec in self.density.values_mut() {
            rec.fold(alpha, gamma, window_index);
        }
        for rec in self.ties.values_mut() {
            rec.fold(beta, gamma, window_index);
        }
        self.window = window_index;
        Ok(())
    }

    /// Effective density toward a community: the prediction folded with the
    /// open window's count, without mutating state. Zero when no record
    /// exists.
    pub fn density_of(&self, community: CommunityId) -> f64 {
        self.density
            .get(&community)
            .map_or(0.0, |r| r.read(self.params.alpha, self.params.gamma, self.window))
    }

    /// Effective tie strength toward a peer; mirrors `density_of` with beta.
    pub fn tie_of(&self, peer: NodeId) -> f64 {
        self.ties
            .get(&peer)
            .map_or(0.0, |r| r.read(self.params.beta, self.params.gamma, self.window))
    }

    /// Installs a density record directly. Intended for deserialization and
    /// test harnesses; normal updates go through `on_contact`/`evaporate`.
    pub fn insert_density_record(&mut self, community: CommunityId, record: EwmaRecord) {
        self.density.insert(community, record);
    }

    /// Installs a tie record directly; see `insert_density_record`.
    pub fn insert_tie_record(&mut self, peer: NodeId, record: EwmaRecord) {
        self.ties.insert(peer, record);
    }

    /// Debug dump: `owner,kind,key,predicted,current_count,last_update_window`.
    pub fn dump_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        for (c, r) in &self.density {
            writeln!(
                w,
                "{},density,{},{},{},{}",
                self.owner, c, r.predicted, r.current_count, r.last_update_window
            )?;
        }
        for (peer, r) in &self.ties {
            writeln!(
                w,
                "{},tie,{},{},{},{}",
                self.owner, peer, r.predicted, r.current_count, r.last_update_window
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::InterestMembership;
    use crate::tree::{build_tree, ROOT};

    fn rec(predicted: f64, count: u64, window: u64) -> EwmaRecord {
        EwmaRecord {
            predicted,
            current_count: count,
            last_update_window: window,
        }
    }

    /// root -> 1 -> 2; nodes 0,1 major 2, node 2 major 1.
    fn nested_tree() -> InterestTree {
        let merged = vec![
            InterestMembership {
                interest_id: 1,
                members: [0, 1, 2].into_iter().map(NodeId).collect(),
            },
            InterestMembership {
                interest_id: 2,
                members: [0, 1].into_iter().map(NodeId).collect(),
            },
        ];
        let mut tree = build_tree(&merged).expect("build");
        tree.set_major_interests(
            [
                (NodeId(0), CommunityId(2)),
                (NodeId(1), CommunityId(2)),
                (NodeId(2), CommunityId(1)),
            ]
            .into_iter()
            .collect(),
        )
        .expect("majors");
        tree
    }

    #[test]
    fn first_contact_counts_tie_and_path_densities() {
        let tree = nested_tree();
        let mut state = SocialState::new(NodeId(0), SocialParams::default());
        state
            .on_contact(NodeId(1), CommunityId(2), &tree, 5.0)
            .expect("contact");
        // Same community: one tie tick, densities along 2 -> 1 -> root.
        assert_eq!(state.ties[&NodeId(1)].current_count, 1);
        for c in [CommunityId(2), CommunityId(1), ROOT] {
            assert_eq!(state.density[&c].current_count, 1, "community {c}");
        }
    }

    #[test]
    fn cross_community_contact_skips_tie() {
        let tree = nested_tree();
        let mut state = SocialState::new(NodeId(0), SocialParams::default());
        state
            .on_contact(NodeId(2), CommunityId(1), &tree, 5.0)
            .expect("contact");
        assert!(state.ties.is_empty());
        assert_eq!(state.density[&CommunityId(1)].current_count, 1);
        assert_eq!(state.density[&ROOT].current_count, 1);
        assert!(!state.density.contains_key(&CommunityId(2)));
    }

    #[test]
    fn repeated_contacts_accumulate_in_window() {
        let tree = nested_tree();
        let mut state = SocialState::new(NodeId(0), SocialParams::default());
        for _ in 0..3 {
            state
                .on_contact(NodeId(1), CommunityId(2), &tree, 10.0)
                .expect("contact");
        }
        assert_eq!(state.ties[&NodeId(1)].current_count, 3);
    }

    #[test]
    fn self_contact_is_an_error() {
        let tree = nested_tree();
        let mut state = SocialState::new(NodeId(0), SocialParams::default());
        assert!(matches!(
            state.on_contact(NodeId(0), CommunityId(2), &tree, 1.0),
            Err(SocialError::SelfContact(NodeId(0)))
        ));
    }

    #[test]
    fn density_fold_matches_direct_evaluation() {
        // alpha 0.7, gamma 0.9, k 1, predicted 10, count 4 -> 5.5
        let mut state = SocialState::new(NodeId(0), SocialParams::default());
        state.insert_density_record(CommunityId(3), rec(10.0, 4, 0));
        state.evaporate(1).expect("evaporate");
        let got = state.density_of(CommunityId(3));
        assert!((got - 5.5).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn tie_fold_with_two_window_gap() {
        // beta 0.1, gamma 0.9, k 2, predicted 5, count 3 -> 3.945
        let mut state = SocialState::new(NodeId(0), SocialParams::default());
        state.insert_tie_record(NodeId(9), rec(5.0, 3, 0));
        state.evaporate(2).expect("evaporate");
        let got = state.tie_of(NodeId(9));
        assert!((got - 3.945).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn empty_windows_decay_toward_zero() {
        let mut state = SocialState::new(NodeId(0), SocialParams::default());
        state.insert_density_record(CommunityId(1), rec(8.0, 0, 0));
        state.evaporate(200).expect("evaporate");
        assert!(state.density_of(CommunityId(1)) < 1e-8);
    }

    #[test]
    fn one_shot_decay_equals_stepwise_empty_folds() {
        let params = SocialParams::default();
        let mut lazy = SocialState::new(NodeId(0), params);
        lazy.insert_density_record(CommunityId(1), rec(7.25, 0, 0));
        lazy.evaporate(6).expect("evaporate");

        let mut eager = SocialState::new(NodeId(0), params);
        eager.insert_density_record(CommunityId(1), rec(7.25, 0, 0));
        for w in 1..=6 {
            eager.evaporate(w).expect("evaporate");
        }
        let (a, b) = (lazy.density_of(CommunityId(1)), eager.density_of(CommunityId(1)));
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn fold_on_read_shows_open_window() {
        let tree = nested_tree();
        let params = SocialParams::default();
        let mut state = SocialState::new(NodeId(0), params);
        for _ in 0..4 {
            state
                .on_contact(NodeId(2), CommunityId(1), &tree, 3.0)
                .expect("contact");
        }
        // Fresh record, predicted 0, count n, read mid-window: alpha * n.
        let got = state.density_of(CommunityId(1));
        assert!((got - params.alpha * 4.0).abs() < 1e-12, "got {got}");
        // Reads are pure.
        assert_eq!(got, state.density_of(CommunityId(1)));
    }

    #[test]
    fn missing_records_read_zero() {
        let state = SocialState::new(NodeId(0), SocialParams::default());
        assert_eq!(state.density_of(CommunityId(42)), 0.0);
        assert_eq!(state.tie_of(NodeId(42)), 0.0);
    }

    #[test]
    fn tie_fold_on_read_after_single_contact() {
        let tree = nested_tree();
        let params = SocialParams::default();
        let mut state = SocialState::new(NodeId(0), params);
        state
            .on_contact(NodeId(1), CommunityId(2), &tree, 2.0)
            .expect("contact");
        let got = state.tie_of(NodeId(1));
        assert!((got - params.beta).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn window_cannot_run_backwards() {
        let mut state = SocialState::new(NodeId(0), SocialParams::default());
        state.evaporate(5).expect("forward");
        assert!(matches!(
            state.evaporate(4),
            Err(SocialError::WindowRanBackwards { requested: 4, current: 5 })
        ));
    }

    #[test]
    fn one_extra_contact_never_lowers_density() {
        use rand::Rng;
        use rand::SeedableRng;
        let tree = nested_tree();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let params = SocialParams {
                alpha: rng.gen_range(0.0..=1.0),
                beta: rng.gen_range(0.0..=1.0),
                gamma: rng.gen_range(0.05..=1.0),
                window_secs: 30.0,
            };
            let mut a = SocialState::new(NodeId(0), params);
            let mut b = SocialState::new(NodeId(0), params);
            for w in 1..rng.gen_range(2..6) {
                let hits = rng.gen_range(0..4);
                for _ in 0..hits {
                    let t = w as f64 * 30.0 - 1.0;
                    a.on_contact(NodeId(2), CommunityId(1), &tree, t).unwrap();
                    b.on_contact(NodeId(2), CommunityId(1), &tree, t).unwrap();
                }
                a.evaporate(w).unwrap();
                b.evaporate(w).unwrap();
            }
            // One extra open-window contact for `a` only.
            a.on_contact(NodeId(2), CommunityId(1), &tree, 1e6).unwrap();
            assert!(a.density_of(CommunityId(1)) >= b.density_of(CommunityId(1)));
            assert!(a.density_of(CommunityId(1)) >= 0.0);
        }
    }

    #[test]
    fn dump_csv_lists_all_records() {
        let tree = nested_tree();
        let mut state = SocialState::new(NodeId(0), SocialParams::default());
        state
            .on_contact(NodeId(1), CommunityId(2), &tree, 1.0)
            .expect("contact");
        let mut buf = Vec::new();
        state.dump_csv(&mut buf).expect("dump");
        let text = String::from_utf8(buf).expect("utf8");
        assert_eq!(text.lines().count(), 4); // 3 densities + 1 tie
        assert!(text.contains("0,tie,1,0,1,0"));
    }
}
