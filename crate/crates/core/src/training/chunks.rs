use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Location of one training chunk: clip index and first frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkRef {
    pub clip: usize,
    pub start: usize,
}

/// Position of a stream: epoch number and offset within its order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StreamState {
    pub epoch: u64,
    pub pos: usize,
}

/// Non-overlapping windows of every clip, visited in a seeded order that
/// is reshuffled each epoch. Trailing remainders shorter than a chunk are
/// dropped.
#[derive(Debug, Clone)]
pub struct ChunkStream {
    chunks: Vec<ChunkRef>,
    chunk_frames: usize,
    seed: u64,
    order: Vec<usize>,
    state: StreamState,
}

impl ChunkStream {
    pub fn new(clip_frames: &[usize], chunk_frames: usize, seed: u64) -> Self {
        assert!(chunk_frames > 0);
        let chunks = clip_frames
            .iter()
            .enumerate()
            .flat_map(|(clip, &t)| (0..t / chunk_frames).map(move |i| ChunkRef {
                clip,
                start: i * chunk_frames,
            }))
            .collect();
        let mut s = ChunkStream {
            chunks,
            chunk_frames,
            seed,
            order: Vec::new(),
            state: StreamState::default(),
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.state.epoch);
        self.order = (0..self.chunks.len()).collect();
        self.order.shuffle(&mut rng);
    }

    /// Chunks in one epoch.
    pub fn per_epoch(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk_frames(&self) -> usize {
        self.chunk_frames
    }

    pub fn state(&self) -> StreamState {
        self.state
    }

    pub fn restore(&mut self, state: StreamState) {
        self.state = state;
        self.shuffle();
    }

    pub fn next_chunk(&mut self) -> Option<ChunkRef> {
        if self.chunks.is_empty() {
            return None;
        }
        if self.state.pos == self.chunks.len() {
            self.state = StreamState {
                epoch: self.state.epoch + 1,
                pos: 0,
            };
            self.shuffle();
        }
        let c = self.chunks[self.order[self.state.pos]];
        self.state.pos += 1;
        Some(c)
    }

    /// The next chunk cut out of `clips`.
    pub fn next_array<F: Clone>(&mut self, clips: &[Array2<F>]) -> Option<Array2<F>> {
        let c = self.next_chunk()?;
        Some(clips[c.clip].slice(s![.., c.start..c.start + self.chunk_frames]).to_owned())
    }
}

/// Chunk stream over magnitude clips (`bins x frames`).
pub fn make_chunks<F>(clips: &[Array2<F>], chunk_frames: usize, seed: u64) -> ChunkStream {
    let frames: Vec<usize> = clips.iter().map(|c| c.ncols()).collect();
    ChunkStream::new(&frames, chunk_frames, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn floor_division_per_clip() {
        assert_eq!(ChunkStream::new(&[300], 128, 0).per_epoch(), 2);
        assert_eq!(ChunkStream::new(&[100], 128, 0).per_epoch(), 0);
        let mut empty = ChunkStream::new(&[100], 128, 0);
        assert!(empty.next_chunk().is_none());
    }

    #[test]
    fn fixed_seed_fixed_order() {
        let take = |seed| {
            let mut s = ChunkStream::new(&[50, 70, 33], 8, seed);
            (0..40).map(|_| s.next_chunk().unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(take(3), take(3));
        assert_ne!(take(3), take(4));
    }

    #[test]
    fn restore_resumes_mid_epoch() {
        let mut a = ChunkStream::new(&[64, 40], 8, 9);
        for _ in 0..13 {
            a.next_chunk();
        }
        let mut b = ChunkStream::new(&[64, 40], 8, 9);
        b.restore(a.state());
        for _ in 0..30 {
            assert_eq!(a.next_chunk(), b.next_chunk());
        }
    }

    #[test]
    fn arrays_are_cut_at_chunk_offsets() {
        let clip = Array2::from_shape_fn((3, 20), |(f, t)| (f * 100 + t) as f64);
        let mut s = make_chunks(&[clip], 8, 1);
        let mut starts = Vec::new();
        for _ in 0..2 {
            let a = s.next_array(&[Array2::from_shape_fn((3, 20), |(f, t)| (f * 100 + t) as f64)]).unwrap();
            assert_eq!(a.dim(), (3, 8));
            starts.push(a[[0, 0]] as usize);
        }
        starts.sort();
        assert_eq!(starts, vec![0, 8]);
    }

    proptest! {
        #[test]
        fn each_epoch_visits_every_chunk_once(frames in proptest::collection::vec(0usize..200, 1..6), chunk in 8usize..40, seed in 0u64..100) {
            let mut s = ChunkStream::new(&frames, chunk, seed);
            let expected: usize = frames.iter().map(|t| t / chunk).sum();
            prop_assert_eq!(s.per_epoch(), expected);
            for _ in 0..2 {
                let mut seen: Vec<_> = (0..expected).map(|_| s.next_chunk().unwrap()).map(|c| (c.clip, c.start)).collect();
                seen.sort();
                seen.dedup();
                prop_assert_eq!(seen.len(), expected);
                prop_assert!(seen.iter().all(|&(c, st)| st + chunk <= frames[c]));
            }
        }
    }
}
