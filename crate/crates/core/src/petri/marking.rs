use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use super::net::Net;
use super::token::{Payload, Tick, Token, TokenId};
use super::PetriError;

/// Token multisets, one FIFO queue per storage slot of the owning net.
///
/// A marking is only meaningful together with the net it was created for;
/// all accessors take that net to resolve place ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Marking {
    slots: Vec<VecDeque<Token>>,
    next_token: u64,
}

impl Marking {
    pub fn empty(net: &Net) -> Self {
        Marking {
            slots: vec![VecDeque::new(); net.storage_len()],
            next_token: 0,
        }
    }

    /// The initial marking declared in the net, all tokens created and
    /// ready at tick 0.
    pub fn initial(net: &Net) -> Self {
        let mut m = Marking::empty(net);
        for place in 0..net.places().len() {
            for p in net.initial_payloads(place) {
                let token = m.mint(p.clone(), 0, 0).expect("ready_at == created_at");
                m.slots[net.storage_of(place)].push_back(token);
            }
        }
        m
    }

    /// Allocates a fresh token id and builds a token.
    pub fn mint(
        &mut self,
        payload: Payload,
        created_at: Tick,
        ready_at: Tick,
    ) -> Result<Token, PetriError> {
        let id = TokenId(self.next_token);
        let token = Token::new(id, payload, created_at, ready_at)?;
        self.next_token += 1;
        Ok(token)
    }

    pub fn tokens(&self, net: &Net, place: &str) -> Result<&VecDeque<Token>, PetriError> {
        let idx = net
            .place_index(place)
            .ok_or_else(|| PetriError::UnknownPlace(place.to_owned()))?;
        Ok(self.tokens_at(net, idx))
    }

    pub fn tokens_at(&self, net: &Net, place: usize) -> &VecDeque<Token> {
        &self.slots[net.storage_of(place)]
    }

    /// Token count of a place; unknown places count as empty.
    pub fn count(&self, net: &Net, place: &str) -> usize {
        self.tokens(net, place).map_or(0, VecDeque::len)
    }

    pub fn slot(&self, slot: usize) -> &VecDeque<Token> {
        &self.slots[slot]
    }

    pub(crate) fn slot_mut(&mut self, slot: usize) -> &mut VecDeque<Token> {
        &mut self.slots[slot]
    }

    pub fn slot_counts(&self) -> Vec<u32> {
        self.slots.iter().map(|s| s.len() as u32).collect()
    }

    pub fn total_tokens(&self) -> usize {
        self.slots.iter().map(VecDeque::len).sum()
    }

    /// Appends `token` FIFO-last to `place`; visible through every alias.
    pub fn inject(&self, net: &Net, place: &str, token: Token) -> Result<Marking, PetriError> {
        let mut next = self.clone();
        next.inject_mut(net, place, token)?;
        Ok(next)
    }

    pub fn inject_mut(&mut self, net: &Net, place: &str, token: Token) -> Result<(), PetriError> {
        let idx = net
            .place_index(place)
            .ok_or_else(|| PetriError::UnknownPlace(place.to_owned()))?;
        let slot = net.storage_of(idx);
        if let Some(cap) = net.storage_capacity(slot) {
            if self.slots[slot].len() as u64 + 1 > cap as u64 {
                return Err(PetriError::CapacityExceeded {
                    place: place.to_owned(),
                    capacity: cap,
                });
            }
        }
        self.next_token = self.next_token.max(token.id().0 + 1);
        self.slots[slot].push_back(token);
        debug_assert!(self.fusion_coherent(net));
        Ok(())
    }

    /// Removes and returns every token of `place` in FIFO order.
    pub fn drain(&mut self, net: &Net, place: &str) -> Result<Vec<Token>, PetriError> {
        let idx = net
            .place_index(place)
            .ok_or_else(|| PetriError::UnknownPlace(place.to_owned()))?;
        Ok(self.slots[net.storage_of(idx)].drain(..).collect())
    }

    /// Token-id sequences read through every alias of every fusion group are
    /// equal.
    pub fn fusion_coherent(&self, net: &Net) -> bool {
        net.fusion_groups().values().all(|members| {
            let mut views = members.iter().map(|m| {
                self.tokens(net, m)
                    .map(|q| q.iter().map(Token::id).collect::<Vec<_>>())
                    .unwrap_or_default()
            });
            match views.next() {
                Some(first) => views.all(|v| v == first),
                None => true,
            }
        })
    }

    /// Non-empty stores keyed by their canonical place id.
    pub fn view(&self, net: &Net) -> MarkingView {
        MarkingView(
            self.slots
                .iter()
                .enumerate()
                .filter(|(_, q)| !q.is_empty())
                .map(|(slot, q)| (net.storage_name(slot).to_owned(), q.iter().cloned().collect()))
                .collect(),
        )
    }
}

/// Serializable, order-stable rendering of a marking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct MarkingView(pub BTreeMap<String, Vec<Token>>);

impl MarkingView {
    pub fn counts(&self) -> BTreeMap<String, usize> {
        self.0.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }
}
