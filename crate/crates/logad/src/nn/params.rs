//! Named, group-tagged parameter storage shared between forward passes,
//! the optimizer, and checkpointing.

use super::Scalar;
use ndarray::Array2;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

/// Handle to one parameter tensor inside a [`ParamStore`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Which part of the model a parameter belongs to. Stage scheduling and the
/// freezing invariants are expressed in terms of these groups.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum ParamGroup {
    EncoderBase,
    EncoderAdapter,
    Projector,
    DecoderBase,
    DecoderAdapter,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::EncoderBase,
        ParamGroup::EncoderAdapter,
        ParamGroup::Projector,
        ParamGroup::DecoderBase,
        ParamGroup::DecoderAdapter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::EncoderBase => "encoder_base",
            ParamGroup::EncoderAdapter => "encoder_adapter",
            ParamGroup::Projector => "projector",
            ParamGroup::DecoderBase => "decoder_base",
            ParamGroup::DecoderAdapter => "decoder_adapter",
        }
    }
}

/// Set of parameter groups, used to declare what a training stage may update.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct GroupSet(u8);

impl GroupSet {
    pub fn empty() -> Self {
        GroupSet(0)
    }

    pub fn of(groups: &[ParamGroup]) -> Self {
        let mut s = GroupSet(0);
        for g in groups {
            s.0 |= 1 << Self::bit(*g);
        }
        s
    }

    pub fn contains(self, g: ParamGroup) -> bool {
        self.0 & (1 << Self::bit(g)) != 0
    }

    fn bit(g: ParamGroup) -> u8 {
        match g {
            ParamGroup::EncoderBase => 0,
            ParamGroup::EncoderAdapter => 1,
            ParamGroup::Projector => 2,
            ParamGroup::DecoderBase => 3,
            ParamGroup::DecoderAdapter => 4,
        }
    }
}

struct Param<F: Scalar> {
    name: String,
    group: ParamGroup,
    value: Arc<Array2<F>>,
    /// Weight decay applies only to matrix-shaped weights, not biases/gains.
    decay: bool,
}

/// Owns every parameter tensor of a model.
pub struct ParamStore<F: Scalar> {
    params: Vec<Param<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        value: Array2<F>,
        decay: bool,
    ) -> ParamId {
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.into(),
            group,
            value: Arc::new(value),
            decay,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array2<F> {
        &self.params[id.0].value
    }

    /// Shared handle for use as a tape leaf.
    pub fn shared(&self, id: ParamId) -> Arc<Array2<F>> {
        Arc::clone(&self.params[id.0].value)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.params[id.0].group
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.params[id.0].decay
    }

    pub fn set_value(&mut self, id: ParamId, value: Array2<F>) {
        assert_eq!(
            self.params[id.0].value.dim(),
            value.dim(),
            "shape change for parameter {}",
            self.params[id.0].name
        );
        self.params[id.0].value = Arc::new(value);
    }

    /// Mutable access for optimizer updates. Clones only if a forward graph
    /// still holds the tensor, which does not happen between steps.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<F> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn ids_in_group(&self, group: ParamGroup) -> Vec<ParamId> {
        self.ids().filter(|id| self.group(*id) == group).collect()
    }

    pub fn param_count(&self, group: ParamGroup) -> usize {
        self.ids_in_group(group)
            .iter()
            .map(|id| self.value(*id).len())
            .sum()
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    /// Deterministic digest of every tensor in a group; bit-identical values
    /// give identical checksums. Used by the stage-freezing assertions.
    pub fn group_checksum(&self, group: ParamGroup) -> u64 {
        let mut ids = self.ids_in_group(group);
        ids.sort();
        let mut h = DefaultHasher::new();
        for id in ids {
            self.params[id.0].name.hash(&mut h);
            for v in self.params[id.0].value.iter() {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn checksum_changes_with_any_bit() {
        let mut store = ParamStore::<f32>::new();
        let id = store.register("w", ParamGroup::Projector, arr2(&[[1.0f32, 2.0]]), true);
        let before = store.group_checksum(ParamGroup::Projector);
        let v = &mut store.value_mut(id)[[0, 1]];
        *v = f32::from_bits(v.to_bits() ^ 1); // flip one bit
        assert_ne!(before, store.group_checksum(ParamGroup::Projector));
    }

    #[test]
    fn groups_are_disjoint() {
        let mut store = ParamStore::<f32>::new();
        store.register("a", ParamGroup::EncoderBase, arr2(&[[1.0f32]]), true);
        store.register("b", ParamGroup::DecoderAdapter, arr2(&[[2.0f32]]), true);
        assert_eq!(store.ids_in_group(ParamGroup::EncoderBase).len(), 1);
        assert_eq!(store.ids_in_group(ParamGroup::Projector).len(), 0);
        let set = GroupSet::of(&[ParamGroup::EncoderAdapter, ParamGroup::Projector]);
        assert!(set.contains(ParamGroup::Projector));
        assert!(!set.contains(ParamGroup::DecoderAdapter));
    }
}
