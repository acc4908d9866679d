//! Episodic replay with goal relabelling.
//!
//! Capacity is counted in transitions. Eviction removes whole episodes,
//! oldest first; a new episode longer than the whole capacity keeps only its
//! most recent transitions.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::latent_reward;
use crate::scalar::{standard_normal_vec, Scalar};
use crate::vae::{VaeError, VaeModel};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("buffer is empty")]
    Empty,
    #[error("capacity must be at least 1")]
    ZeroCapacity,
    #[error("malformed episode: {0}")]
    Episode(String),
    #[error("relabel fractions must be non-negative and sum to at most 1, got future={future} prior={prior}")]
    Fractions { future: f64, prior: f64 },
    #[error("malformed snapshot: {0}")]
    Format(String),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One rollout: `L + 1` observations and latents, `L` actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<T> {
    pub observations: Vec<Vec<T>>,
    pub latents: Vec<Vec<T>>,
    pub actions: Vec<Vec<T>>,
    /// Latent goal the policy was conditioned on while collecting.
    pub goal_latent: Vec<T>,
}

impl<T: Scalar> Episode<T> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<(), ReplayError> {
        let l = self.actions.len();
        if l == 0 {
            return Err(ReplayError::Episode("no transitions".into()));
        }
        if self.observations.len() != l + 1 || self.latents.len() != l + 1 {
            return Err(ReplayError::Episode(format!(
                "{} actions need {} observations and latents, got {} and {}",
                l,
                l + 1,
                self.observations.len(),
                self.latents.len()
            )));
        }
        let uniform = |v: &[Vec<T>]| v.windows(2).all(|w| w[0].len() == w[1].len());
        if !uniform(&self.observations) || !uniform(&self.latents) || !uniform(&self.actions) {
            return Err(ReplayError::Episode("ragged rows".into()));
        }
        if self.goal_latent.len() != self.latents[0].len() {
            return Err(ReplayError::Episode("goal latent dimension differs from latents".into()));
        }
        Ok(())
    }

    /// Drops the first `k` transitions.
    fn drop_front(&mut self, k: usize) {
        self.observations.drain(..k);
        self.latents.drain(..k);
        self.actions.drain(..k);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelabelFractions {
    /// Goal replaced by a later achieved state of the same episode.
    pub future: f64,
    /// Goal replaced by a draw from the latent prior.
    pub prior: f64,
}

impl Default for RelabelFractions {
    fn default() -> Self {
        Self {
            future: 0.5,
            prior: 0.2,
        }
    }
}

impl RelabelFractions {
    pub fn validate(&self) -> Result<(), ReplayError> {
        let ok = self.future >= 0.0 && self.prior >= 0.0 && self.future + self.prior <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(ReplayError::Fractions {
                future: self.future,
                prior: self.prior,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalSource {
    Original,
    Future,
    Prior,
}

/// Borrowed view of one stored step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<'a, T> {
    pub obs: &'a [T],
    pub next_obs: &'a [T],
    pub latent: &'a [T],
    pub next_latent: &'a [T],
    pub action: &'a [T],
    pub goal_latent: &'a [T],
}

/// Transitions in latent space; rows are aligned across fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub latents: Vec<Vec<T>>,
    pub actions: Vec<Vec<T>>,
    pub next_latents: Vec<Vec<T>>,
    pub goals: Vec<Vec<T>>,
    /// Latent reward for the effective goal.
    pub rewards: Vec<T>,
    pub sources: Vec<GoalSource>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeBuffer<T> {
    capacity: usize,
    episodes: VecDeque<Episode<T>>,
    transitions: usize,
}

impl<T: Scalar> EpisodeBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            episodes: VecDeque::new(),
            transitions: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.transitions
    }

    pub fn is_empty(&self) -> bool {
        self.transitions == 0
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode<T>> {
        self.episodes.iter()
    }

    /// Pops oldest episodes until at most `limit` transitions remain.
    fn evict_to(&mut self, limit: usize) -> usize {
        let mut evicted = 0;
        while self.transitions > limit {
            let old = self.episodes.pop_front().expect("non-empty");
            self.transitions -= old.len();
            evicted += 1;
        }
        evicted
    }

    /// Appends `episode` and returns how many old episodes were evicted.
    pub fn push_episode(&mut self, mut episode: Episode<T>) -> Result<usize, ReplayError> {
        episode.validate()?;
        if let Some(first) = self.episodes.front() {
            if first.observations[0].len() != episode.observations[0].len()
                || first.latents[0].len() != episode.latents[0].len()
                || first.actions[0].len() != episode.actions[0].len()
            {
                return Err(ReplayError::Episode("dimensions differ from stored episodes".into()));
            }
        }
        if episode.len() > self.capacity {
            let over = episode.len() - self.capacity;
            episode.drop_front(over);
        }
        let evicted = self.evict_to(self.capacity - episode.len());
        self.transitions += episode.len();
        self.episodes.push_back(episode);
        Ok(evicted)
    }

    /// Changes capacity, evicting whole oldest episodes when shrinking.
    pub fn resize(&mut self, capacity: usize) -> Result<usize, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        self.capacity = capacity;
        Ok(self.evict_to(capacity))
    }

    /// Every stored transition in insertion order.
    pub fn transitions(&self) -> impl Iterator<Item = Transition<'_, T>> + '_ {
        self.episodes.iter().flat_map(|ep| {
            (0..ep.len()).map(move |i| Transition {
                obs: &ep.observations[i],
                next_obs: &ep.observations[i + 1],
                latent: &ep.latents[i],
                next_latent: &ep.latents[i + 1],
                action: &ep.actions[i],
                goal_latent: &ep.goal_latent,
            })
        })
    }

    /// Episode index and step of the `k`-th stored transition.
    fn locate(&self, mut k: usize) -> (usize, usize) {
        for (e, ep) in self.episodes.iter().enumerate() {
            if k < ep.len() {
                return (e, k);
            }
            k -= ep.len();
        }
        unreachable!("transition index within buffer length")
    }

    /// Uniform over stored transitions, with goals relabelled per `fractions`.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        fractions: RelabelFractions,
        rng: &mut R,
    ) -> Result<Batch<T>, ReplayError> {
        fractions.validate()?;
        if self.is_empty() {
            return Err(ReplayError::Empty);
        }
        let mut ks: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.transitions)).collect();
        ks.sort_unstable();
        let mut out = Batch {
            latents: Vec::with_capacity(batch_size),
            actions: Vec::with_capacity(batch_size),
            next_latents: Vec::with_capacity(batch_size),
            goals: Vec::with_capacity(batch_size),
            rewards: Vec::with_capacity(batch_size),
            sources: Vec::with_capacity(batch_size),
        };
        for k in ks {
            let (e, i) = self.locate(k);
            let ep = &self.episodes[e];
            let u: f64 = rng.random();
            let (goal, source) = if u < fractions.future {
                let j = rng.random_range(i..ep.len());
                (ep.latents[j + 1].clone(), GoalSource::Future)
            } else if u < fractions.future + fractions.prior {
                (standard_normal_vec(rng, ep.goal_latent.len()), GoalSource::Prior)
            } else {
                (ep.goal_latent.clone(), GoalSource::Original)
            };
            out.latents.push(ep.latents[i].clone());
            out.actions.push(ep.actions[i].clone());
            out.next_latents.push(ep.latents[i + 1].clone());
            out.rewards.push(latent_reward(&ep.latents[i + 1], &goal));
            out.goals.push(goal);
            out.sources.push(source);
        }
        Ok(out)
    }

    /// `n` observations drawn uniformly with replacement from stored transitions'
    /// next observations.
    pub fn sample_observations<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&[T]>, ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::Empty);
        }
        Ok((0..n)
            .map(|_| {
                let (e, i) = self.locate(rng.random_range(0..self.transitions));
                self.episodes[e].observations[i + 1].as_slice()
            })
            .collect())
    }

    /// Every stored observation, including episode starts.
    pub fn all_observations(&self) -> Vec<&[T]> {
        self.episodes
            .iter()
            .flat_map(|ep| ep.observations.iter().map(Vec::as_slice))
            .collect()
    }

    /// Re-encodes every observation with the encoder mean.
    pub fn refresh_latents(&mut self, vae: &VaeModel<T>) -> Result<(), ReplayError> {
        for ep in self.episodes.iter_mut() {
            for (obs, z) in ep.observations.iter().zip(ep.latents.iter_mut()) {
                *z = vae.encode_mean(obs)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ReplayError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(SNAPSHOT_MAGIC)?;
        write_u64(&mut w, self.capacity as u64)?;
        write_u64(&mut w, self.episodes.len() as u64)?;
        for ep in &self.episodes {
            write_u64(&mut w, ep.len() as u64)?;
            write_u64(&mut w, ep.observations[0].len() as u64)?;
            write_u64(&mut w, ep.latents[0].len() as u64)?;
            write_u64(&mut w, ep.actions[0].len() as u64)?;
            let rows = ep
                .observations
                .iter()
                .chain(&ep.latents)
                .chain(&ep.actions)
                .chain(std::iter::once(&ep.goal_latent));
            for row in rows {
                for v in row {
                    w.write_all(&v.as_f64().to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ReplayError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(ReplayError::Format("bad magic".into()));
        }
        let capacity = read_u64(&mut r)? as usize;
        let count = read_u64(&mut r)? as usize;
        let mut buf = Self::new(capacity)?;
        for _ in 0..count {
            let l = read_u64(&mut r)? as usize;
            let (od, ld, ad) = (
                read_u64(&mut r)? as usize,
                read_u64(&mut r)? as usize,
                read_u64(&mut r)? as usize,
            );
            let mut rows = |n: usize, d: usize| -> Result<Vec<Vec<T>>, ReplayError> {
                (0..n).map(|_| read_row(&mut r, d)).collect()
            };
            let observations = rows(l + 1, od)?;
            let latents = rows(l + 1, ld)?;
            let actions = rows(l, ad)?;
            let goal_latent = read_row(&mut r, ld)?;
            let ep = Episode {
                observations,
                latents,
                actions,
                goal_latent,
            };
            ep.validate()?;
            buf.transitions += ep.len();
            buf.episodes.push_back(ep);
        }
        if buf.transitions > buf.capacity {
            return Err(ReplayError::Format("stored transitions exceed capacity".into()));
        }
        Ok(buf)
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"RPB1";

fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_row<T: Scalar, R: Read>(r: &mut R, d: usize) -> Result<Vec<T>, ReplayError> {
    let mut b = [0u8; 8];
    (0..d)
        .map(|_| {
            r.read_exact(&mut b)?;
            Ok(T::c(f64::from_le_bytes(b)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Episode whose observation and latent at step `t` are `[tag, t]`.
    pub(crate) fn tagged(tag: f64, len: usize) -> Episode<f64> {
        let rows = |n: usize| (0..n).map(|t| vec![tag, t as f64]).collect::<Vec<_>>();
        Episode {
            observations: rows(len + 1),
            latents: rows(len + 1),
            actions: (0..len).map(|t| vec![t as f64, 0.0]).collect(),
            goal_latent: vec![tag, -1.0],
        }
    }

    #[test]
    fn shrink_evicts_whole_oldest_episodes() {
        let mut b = EpisodeBuffer::new(150).unwrap();
        for tag in 0..3 {
            b.push_episode(tagged(tag as f64, 50)).unwrap();
        }
        assert_eq!(b.len(), 150);
        assert_eq!(b.resize(150).unwrap(), 0);
        assert_eq!(b.resize(120).unwrap(), 1);
        assert_eq!(b.len(), 100);
        assert_eq!(b.num_episodes(), 2);
        assert_eq!(b.episodes().next().unwrap().goal_latent[0], 1.0);
    }

    #[test]
    fn push_evicts_until_it_fits() {
        let mut b = EpisodeBuffer::new(100).unwrap();
        assert_eq!(b.push_episode(tagged(0.0, 40)).unwrap(), 0);
        assert_eq!(b.push_episode(tagged(1.0, 40)).unwrap(), 0);
        assert_eq!(b.push_episode(tagged(2.0, 40)).unwrap(), 1);
        assert_eq!(b.len(), 80);
        let tags: Vec<f64> = b.episodes().map(|e| e.goal_latent[0]).collect();
        assert_eq!(tags, vec![1.0, 2.0]);
    }

    #[test]
    fn oversized_episode_keeps_its_tail() {
        let mut b = EpisodeBuffer::new(10).unwrap();
        b.push_episode(tagged(0.0, 3)).unwrap();
        b.push_episode(tagged(1.0, 25)).unwrap();
        assert_eq!(b.len(), 10);
        assert_eq!(b.num_episodes(), 1);
        let ep = b.episodes().next().unwrap();
        assert_eq!(ep.latents[0], vec![1.0, 15.0]);
        assert_eq!(ep.latents[10], vec![1.0, 25.0]);
    }

    #[test]
    fn full_buffer_replaces_oldest() {
        let mut b = EpisodeBuffer::new(150).unwrap();
        for tag in 0..3 {
            assert_eq!(b.push_episode(tagged(tag as f64, 50)).unwrap(), 0);
        }
        assert_eq!(b.push_episode(tagged(3.0, 50)).unwrap(), 1);
        assert_eq!(b.len(), 150);
        let mut small = EpisodeBuffer::new(30).unwrap();
        small.push_episode(tagged(0.0, 50)).unwrap();
        assert_eq!(small.len(), 30);
        assert_eq!(small.episodes().next().unwrap().latents[0], vec![0.0, 20.0]);
    }

    #[test]
    fn degenerate_future_relabel_uses_own_next_state() {
        let mut b = EpisodeBuffer::new(10).unwrap();
        b.push_episode(tagged(0.0, 1)).unwrap();
        let fr = RelabelFractions { future: 1.0, prior: 0.0 };
        let batch = b.sample_batch(5, fr, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for i in 0..5 {
            assert_eq!(batch.goals[i], batch.next_latents[i]);
            assert_eq!(batch.rewards[i], 0.0);
        }
        let keep = RelabelFractions { future: 0.0, prior: 0.0 };
        let batch = b.sample_batch(5, keep, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(batch.goals.iter().all(|g| g == &vec![0.0, -1.0]));
    }

    #[test]
    fn rewards_match_effective_goals() {
        let mut b = EpisodeBuffer::new(10).unwrap();
        b.push_episode(tagged(0.0, 4)).unwrap();
        b.push_episode(tagged(1.0, 6)).unwrap();
        assert_eq!(b.transitions().count(), 10);
        let batch = b.sample_batch(500, RelabelFractions::default(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for i in 0..batch.len() {
            let expect = -crate::scalar::l2_distance(&batch.next_latents[i], &batch.goals[i]);
            assert_eq!(batch.rewards[i], expect);
        }
    }

    #[test]
    fn growing_keeps_everything() {
        let mut b = EpisodeBuffer::new(50).unwrap();
        b.push_episode(tagged(0.0, 50)).unwrap();
        b.resize(500).unwrap();
        assert_eq!(b.len(), 50);
        b.push_episode(tagged(1.0, 50)).unwrap();
        assert_eq!(b.len(), 100);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(EpisodeBuffer::<f64>::new(0).is_err());
        let mut b = EpisodeBuffer::new(10).unwrap();
        let mut bad = tagged(0.0, 3);
        bad.latents.pop();
        assert!(b.push_episode(bad).is_err());
        assert!(b.resize(0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            b.sample_batch(4, RelabelFractions::default(), &mut rng),
            Err(ReplayError::Empty)
        ));
        b.push_episode(tagged(0.0, 3)).unwrap();
        let bad_fr = RelabelFractions {
            future: 0.8,
            prior: 0.3,
        };
        assert!(b.sample_batch(4, bad_fr, &mut rng).is_err());
    }

    #[test]
    fn relabelled_goals_come_from_the_right_places() {
        let mut b = EpisodeBuffer::new(1000).unwrap();
        for tag in 0..5 {
            b.push_episode(tagged(tag as f64, 20)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = b.sample_batch(4000, RelabelFractions::default(), &mut rng).unwrap();
        let mut counts = [0usize; 3];
        for i in 0..batch.len() {
            let (z, zn, g) = (&batch.latents[i], &batch.next_latents[i], &batch.goals[i]);
            assert_eq!(z[0], zn[0]);
            assert_eq!(zn[1], z[1] + 1.0);
            assert_eq!(batch.actions[i][0], z[1]);
            match batch.sources[i] {
                GoalSource::Original => {
                    counts[0] += 1;
                    assert_eq!(g, &vec![z[0], -1.0]);
                }
                GoalSource::Future => {
                    counts[1] += 1;
                    assert_eq!(g[0], z[0]);
                    assert!(g[1] >= zn[1] && g[1] <= 20.0);
                }
                GoalSource::Prior => counts[2] += 1,
            }
        }
        let frac = |c: usize| c as f64 / batch.len() as f64;
        assert!((frac(counts[1]) - 0.5).abs() < 0.03);
        assert!((frac(counts[2]) - 0.2).abs() < 0.03);
        assert!((frac(counts[0]) - 0.3).abs() < 0.03);
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut b = EpisodeBuffer::new(100).unwrap();
        b.push_episode(tagged(0.0, 7)).unwrap();
        b.push_episode(tagged(1.0, 9)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("buf.bin");
        b.save(&path).unwrap();
        let back = EpisodeBuffer::<f64>::load(&path).unwrap();
        assert_eq!(back.capacity(), 100);
        assert_eq!(back.len(), 16);
        assert!(back.episodes().eq(b.episodes()));
    }

    #[test]
    fn sampled_observations_are_next_states() {
        let mut b = EpisodeBuffer::new(100).unwrap();
        b.push_episode(tagged(3.0, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obs = b.sample_observations(50, &mut rng).unwrap();
        assert!(obs.iter().all(|o| o[0] == 3.0 && o[1] >= 1.0));
        assert_eq!(b.all_observations().len(), 5);
    }
}
