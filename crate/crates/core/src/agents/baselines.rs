//! Non-learning reference agents.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use super::Agent;
use crate::env::{Action, ActionForm};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, ItemCatalog};
use crate::state::EnvState;

fn order_to_action(form: ActionForm, order: Vec<usize>) -> Result<Action> {
    match form {
        ActionForm::SingleItem => Ok(Action::SingleItem(order[0])),
        ActionForm::RankedList => Ok(Action::RankedList(order)),
        ActionForm::Preference => Err(Error::config("baselines do not emit preference vectors")),
    }
}

/// Uniform slot or uniform permutation.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    form: ActionForm,
}

impl RandomAgent {
    pub fn new(form: ActionForm) -> Result<Self> {
        if form == ActionForm::Preference {
            return Err(Error::config(
                "random agent supports single_item and ranked_list",
            ));
        }
        Ok(RandomAgent { form })
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> &str {
        "random"
    }

    fn action_form(&self) -> ActionForm {
        self.form
    }

    fn act(&mut self, state: &EnvState, rng: &mut dyn RngCore) -> Result<Action> {
        let n = state.num_candidates();
        match self.form {
            ActionForm::SingleItem => Ok(Action::SingleItem(rng.gen_range(0..n))),
            _ => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(rng);
                Ok(Action::RankedList(order))
            }
        }
    }
}

/// Candidates ordered by catalog click count, most clicked first; equal
/// counts keep impression order. Counts from `new` cover the whole dataset,
/// including the clickout being scored.
#[derive(Debug, Clone)]
pub struct PopularityAgent {
    clicks: HashMap<String, u64>,
    form: ActionForm,
}

impl PopularityAgent {
    pub fn new(catalog: &ItemCatalog, form: ActionForm) -> Self {
        let clicks = catalog
            .ids()
            .map(|id| (id.to_string(), catalog.get(id).map_or(0, |r| r.clicks)))
            .collect();
        PopularityAgent { clicks, form }
    }

    pub fn from_clicks(clicks: HashMap<String, u64>, form: ActionForm) -> Self {
        PopularityAgent { clicks, form }
    }

    pub fn order(&self, candidates: &[String]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by_key(|&k| {
            std::cmp::Reverse(self.clicks.get(&candidates[k]).copied().unwrap_or(0))
        });
        order
    }
}

impl Agent for PopularityAgent {
    fn name(&self) -> &str {
        "popularity"
    }

    fn action_form(&self) -> ActionForm {
        self.form
    }

    fn act(&mut self, state: &EnvState, _rng: &mut dyn RngCore) -> Result<Action> {
        order_to_action(self.form, self.order(&state.candidate_ids))
    }
}

/// User-based collaborative filtering over the binary user x item
/// interaction matrix (any item-directed event counts as an interaction).
#[derive(Debug, Clone, Default)]
pub struct CfModel {
    users: Vec<(String, BTreeSet<String>)>,
}

impl CfModel {
    pub fn from_interactions<I, U, S>(rows: I) -> Self
    where
        I: IntoIterator<Item = (U, S)>,
        U: Into<String>,
        S: IntoIterator,
        S::Item: Into<String>,
    {
        let mut by_user: HashMap<String, BTreeSet<String>> = HashMap::new();
        for (u, items) in rows {
            by_user
                .entry(u.into())
                .or_default()
                .extend(items.into_iter().map(Into::into));
        }
        let mut users: Vec<(String, BTreeSet<String>)> = by_user.into_iter().collect();
        users.sort_by(|a, b| a.0.cmp(&b.0));
        CfModel { users }
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        CfModel::from_interactions(ds.sessions.iter().map(|s| {
            (
                s.user_id.clone(),
                s.events()
                    .iter()
                    .filter(|e| e.action_type.is_item_directed())
                    .map(|e| e.reference.clone())
                    .collect::<Vec<_>>(),
            )
        }))
    }

    /// Similarity-weighted neighbour votes for each candidate, using cosine
    /// similarity between binary item sets. Rows of `exclude_user` are
    /// ignored. Returns `None` when no neighbour overlaps the query.
    pub fn scores(
        &self,
        query: &BTreeSet<String>,
        exclude_user: Option<&str>,
        candidates: &[String],
    ) -> Option<Vec<f64>> {
        if query.is_empty() {
            return None;
        }
        let mut scores = vec![0.0; candidates.len()];
        let mut any = false;
        for (user, items) in &self.users {
            if Some(user.as_str()) == exclude_user || items.is_empty() {
                continue;
            }
            let overlap = query.intersection(items).count();
            if overlap == 0 {
                continue;
            }
            any = true;
            let sim = overlap as f64 / ((query.len() * items.len()) as f64).sqrt();
            for (s, c) in scores.iter_mut().zip(candidates) {
                if items.contains(c) {
                    *s += sim;
                }
            }
        }
        any.then_some(scores)
    }
}

/// Ranks candidates by [`CfModel::scores`] for the session's interaction
/// history, falling back to popularity order when no neighbour overlaps.
#[derive(Debug, Clone)]
pub struct CfAgent {
    model: CfModel,
    popularity: PopularityAgent,
    form: ActionForm,
    fallbacks: usize,
}

impl CfAgent {
    pub fn new(model: CfModel, popularity: PopularityAgent, form: ActionForm) -> Self {
        CfAgent {
            model,
            popularity,
            form,
            fallbacks: 0,
        }
    }

    pub fn from_dataset(ds: &Dataset, form: ActionForm) -> Self {
        CfAgent::new(
            CfModel::from_dataset(ds),
            PopularityAgent::new(&ds.catalog, form),
            form,
        )
    }

    /// Decisions that fell back to popularity order.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    pub fn order(
        &mut self,
        query: &BTreeSet<String>,
        exclude_user: Option<&str>,
        candidates: &[String],
    ) -> Vec<usize> {
        let pop = self.popularity.order(candidates);
        match self.model.scores(query, exclude_user, candidates) {
            Some(scores) => {
                // popularity order breaks ties
                let mut order = pop;
                order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
                order
            }
            None => {
                self.fallbacks += 1;
                pop
            }
        }
    }
}

impl Agent for CfAgent {
    fn name(&self) -> &str {
        "cf"
    }

    fn action_form(&self) -> ActionForm {
        self.form
    }

    fn act(&mut self, state: &EnvState, _rng: &mut dyn RngCore) -> Result<Action> {
        let query: BTreeSet<String> = state.history.iter().cloned().collect();
        let order = self.order(&query, Some(&state.user_id), &state.candidate_ids);
        order_to_action(self.form, order)
    }
}

/// Always answers with the logged click; an upper bound for any metric.
#[derive(Debug, Clone)]
pub struct OracleAgent {
    truth: HashMap<(String, u32), String>,
    form: ActionForm,
}

impl OracleAgent {
    pub fn new(ds: &Dataset, form: ActionForm) -> Self {
        let truth = ds
            .sessions
            .iter()
            .flat_map(|s| s.clickout_indices().iter().map(move |&i| &s.events()[i]))
            .map(|e| ((e.session_id.clone(), e.step), e.reference.clone()))
            .collect();
        OracleAgent { truth, form }
    }
}

impl Agent for OracleAgent {
    fn name(&self) -> &str {
        "oracle"
    }

    fn action_form(&self) -> ActionForm {
        self.form
    }

    fn act(&mut self, state: &EnvState, _rng: &mut dyn RngCore) -> Result<Action> {
        let target = self
            .truth
            .get(&(state.session_id.clone(), state.step))
            .ok_or_else(|| Error::data("oracle has no logged click for this state"))?;
        let slot = state
            .candidate_ids
            .iter()
            .position(|c| c == target)
            .ok_or_else(|| Error::data("logged click not among candidates"))?;
        let mut order = vec![slot];
        order.extend((0..state.num_candidates()).filter(|&k| k != slot));
        order_to_action(self.form, order)
    }
}
