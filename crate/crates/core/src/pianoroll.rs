//! Binary bass+drum pianoroll on a 16th-note grid and 8-bar phrase windowing.
//!
//! A phrase is a `(T·B) × P = 128 × 57` grid stored time-major. Rows 0–47
//! are bass pitches 24 (C1) to 71 (B4); rows 48–56 are the nine drum
//! components in [`DrumPart`] order. Bass cells hold sustain, drum cells
//! mark onsets only.

use crate::error::{Error, Result};
use crate::midi::{MidiSong, Note};

pub const STEPS_PER_BAR: usize = 16;
pub const BARS_PER_PHRASE: usize = 8;
pub const PHRASE_STEPS: usize = STEPS_PER_BAR * BARS_PER_PHRASE;
pub const BASS_ROWS: usize = 48;
pub const DRUM_ROWS: usize = 9;
pub const PITCHES: usize = BASS_ROWS + DRUM_ROWS;
pub const PHRASE_CELLS: usize = PHRASE_STEPS * PITCHES;
pub const BAR_CELLS: usize = STEPS_PER_BAR * PITCHES;

pub const BASS_LOWEST_PITCH: u8 = 24;
pub const BASS_HIGHEST_PITCH: u8 = 71;
pub const BASS_PROGRAMS: std::ops::RangeInclusive<u8> = 32..=39;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrumPart {
    Kick,
    Snare,
    ClosedHat,
    OpenHat,
    LowTom,
    MidTom,
    HighTom,
    Crash,
    Ride,
}

impl DrumPart {
    pub const ALL: [DrumPart; DRUM_ROWS] = [
        DrumPart::Kick,
        DrumPart::Snare,
        DrumPart::ClosedHat,
        DrumPart::OpenHat,
        DrumPart::LowTom,
        DrumPart::MidTom,
        DrumPart::HighTom,
        DrumPart::Crash,
        DrumPart::Ride,
    ];

    /// General MIDI percussion key mapped onto the nine-piece kit.
    pub fn from_gm(pitch: u8) -> Option<Self> {
        use DrumPart::*;
        Some(match pitch {
            35 | 36 => Kick,
            37 | 38 | 40 => Snare,
            42 | 44 => ClosedHat,
            46 => OpenHat,
            41 | 43 | 45 => LowTom,
            47 | 48 => MidTom,
            50 => HighTom,
            49 | 52 | 55 | 57 => Crash,
            51 | 53 | 59 => Ride,
            _ => return None,
        })
    }

    /// Key used when rendering this part back to MIDI.
    pub fn gm_pitch(self) -> u8 {
        use DrumPart::*;
        match self {
            Kick => 36,
            Snare => 38,
            ClosedHat => 42,
            OpenHat => 46,
            LowTom => 45,
            MidTom => 47,
            HighTom => 50,
            Crash => 49,
            Ride => 51,
        }
    }

    pub fn row(self) -> usize {
        BASS_ROWS + self as usize
    }
}

/// Bass row for a MIDI pitch after octave-shifting it into C1–B4.
pub fn bass_row(pitch: u8) -> usize {
    let mut p = i32::from(pitch);
    while p < i32::from(BASS_LOWEST_PITCH) {
        p += 12;
    }
    while p > i32::from(BASS_HIGHEST_PITCH) {
        p -= 12;
    }
    (p - i32::from(BASS_LOWEST_PITCH)) as usize
}

/// One 8-bar phrase, `PHRASE_STEPS × PITCHES` cells in {0, 1}.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PianorollPhrase {
    cells: Vec<u8>,
}

impl std::fmt::Debug for PianorollPhrase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PianorollPhrase({} active cells)", self.active_cells())
    }
}

impl Default for PianorollPhrase {
    fn default() -> Self {
        Self::empty()
    }
}

impl PianorollPhrase {
    pub fn empty() -> Self {
        PianorollPhrase {
            cells: vec![0; PHRASE_CELLS],
        }
    }

    /// Builds a phrase from time-major cells, checking the binary and
    /// single-bass-note invariants.
    pub fn from_cells(cells: Vec<u8>) -> Result<Self> {
        if cells.len() != PHRASE_CELLS {
            return Err(Error::invalid(format!(
                "phrase needs {PHRASE_CELLS} cells, got {}",
                cells.len()
            )));
        }
        if cells.iter().any(|&c| c > 1) {
            return Err(Error::invalid("phrase cells must be 0 or 1"));
        }
        let phrase = PianorollPhrase { cells };
        if let Some(t) = (0..PHRASE_STEPS).find(|&t| phrase.bass_notes_at(t) > 1) {
            return Err(Error::invalid(format!("more than one bass pitch at step {t}")));
        }
        Ok(phrase)
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, step: usize, row: usize) -> bool {
        self.cells[step * PITCHES + row] == 1
    }

    /// Sets a cell. Setting a bass row clears any other bass row at that step.
    pub fn set(&mut self, step: usize, row: usize, on: bool) {
        if on && row < BASS_ROWS {
            self.cells[step * PITCHES..step * PITCHES + BASS_ROWS].fill(0);
        }
        self.cells[step * PITCHES + row] = u8::from(on);
    }

    pub fn bar(&self, bar: usize) -> &[u8] {
        &self.cells[bar * BAR_CELLS..(bar + 1) * BAR_CELLS]
    }

    pub fn active_cells(&self) -> usize {
        self.cells.iter().map(|&c| c as usize).sum()
    }

    /// Bass row sounding at `step`, if any.
    pub fn bass_at(&self, step: usize) -> Option<usize> {
        self.cells[step * PITCHES..step * PITCHES + BASS_ROWS]
            .iter()
            .position(|&c| c == 1)
    }

    fn bass_notes_at(&self, step: usize) -> usize {
        self.cells[step * PITCHES..step * PITCHES + BASS_ROWS]
            .iter()
            .filter(|&&c| c == 1)
            .count()
    }

    /// Cells as fp64 in `[PITCHES, PHRASE_STEPS]` (channel-major) order.
    pub fn to_channels(&self) -> Vec<f64> {
        let mut out = vec![0.0; PHRASE_CELLS];
        for t in 0..PHRASE_STEPS {
            for p in 0..PITCHES {
                out[p * PHRASE_STEPS + t] = f64::from(self.cells[t * PITCHES + p]);
            }
        }
        out
    }
}

/// Per-bar binary grid covering a whole song.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BarStream {
    bars: usize,
    cells: Vec<u8>,
}

impl BarStream {
    pub fn new(bars: usize) -> Self {
        BarStream {
            bars,
            cells: vec![0; bars * BAR_CELLS],
        }
    }

    pub fn bars(&self) -> usize {
        self.bars
    }

    pub fn steps(&self) -> usize {
        self.bars * STEPS_PER_BAR
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, step: usize, row: usize) -> bool {
        self.cells[step * PITCHES + row] == 1
    }

    /// Concatenates phrases bar by bar.
    pub fn from_phrases(phrases: &[PianorollPhrase]) -> Self {
        BarStream {
            bars: phrases.len() * BARS_PER_PHRASE,
            cells: phrases.iter().flat_map(|p| p.cells().iter().copied()).collect(),
        }
    }

    /// The first `bars` bars.
    pub fn truncate(&mut self, bars: usize) {
        self.bars = self.bars.min(bars);
        self.cells.truncate(self.bars * BAR_CELLS);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub source: u32,
    pub start_bar: u32,
}

/// Ordered phrases with their origin.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    phrases: Vec<PianorollPhrase>,
    provenance: Vec<Provenance>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Phrases without a known origin; provenance is their index.
    pub fn from_phrases(phrases: Vec<PianorollPhrase>) -> Self {
        let provenance = (0..phrases.len())
            .map(|i| Provenance {
                source: i as u32,
                start_bar: 0,
            })
            .collect();
        Corpus { phrases, provenance }
    }

    pub fn push(&mut self, phrase: PianorollPhrase, provenance: Provenance) {
        self.phrases.push(phrase);
        self.provenance.push(provenance);
    }

    pub fn extend(&mut self, other: Corpus) {
        self.phrases.extend(other.phrases);
        self.provenance.extend(other.provenance);
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn phrases(&self) -> &[PianorollPhrase] {
        &self.phrases
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PianorollPhrase, &Provenance)> {
        self.phrases.iter().zip(&self.provenance)
    }

    /// Keeps the entries whose index passes `keep`, preserving order.
    pub fn filter_indices(&self, keep: impl Fn(usize) -> bool) -> Corpus {
        let mut out = Corpus::new();
        for (i, (p, prov)) in self.iter().enumerate() {
            if keep(i) {
                out.push(p.clone(), *prov);
            }
        }
        out
    }
}

/// Step grid geometry for one song.
#[derive(Debug, Clone, Copy)]
pub struct Grid {
    pub ticks_per_quarter: u64,
    pub steps: usize,
}

impl Grid {
    /// Nearest 16th step to `tick`, halves rounding up.
    pub fn onset_step(&self, tick: u64) -> usize {
        let tpq = self.ticks_per_quarter as u128;
        ((8 * tick as u128 + tpq) / (2 * tpq)) as usize
    }

    /// Step containing `tick`.
    pub fn containing_step(&self, tick: u64) -> usize {
        ((4 * tick as u128) / self.ticks_per_quarter as u128) as usize
    }
}

/// Bass rows (`steps × BASS_ROWS`, time-major) for the bass-program notes.
pub fn map_bass<'a>(notes: impl IntoIterator<Item = &'a Note>, grid: Grid) -> Vec<u8> {
    let mut lowest: Vec<Option<usize>> = vec![None; grid.steps];
    for n in notes {
        if n.is_drum || !BASS_PROGRAMS.contains(&n.program) {
            continue;
        }
        let row = bass_row(n.pitch);
        let start = grid.onset_step(n.onset);
        let end = grid
            .containing_step(n.onset.saturating_add(n.duration))
            .max(start + 1)
            .min(grid.steps);
        for slot in lowest.iter_mut().take(end).skip(start) {
            *slot = Some(slot.map_or(row, |r| r.min(row)));
        }
    }
    let mut rows = vec![0u8; grid.steps * BASS_ROWS];
    for (t, r) in lowest.iter().enumerate() {
        if let Some(r) = r {
            rows[t * BASS_ROWS + r] = 1;
        }
    }
    rows
}

/// Drum rows (`steps × DRUM_ROWS`, time-major); onsets only.
pub fn map_drums<'a>(notes: impl IntoIterator<Item = &'a Note>, grid: Grid) -> Vec<u8> {
    let mut rows = vec![0u8; grid.steps * DRUM_ROWS];
    for n in notes {
        if !n.is_drum {
            continue;
        }
        let Some(part) = DrumPart::from_gm(n.pitch) else { continue };
        let step = grid.onset_step(n.onset);
        if step < grid.steps {
            rows[step * DRUM_ROWS + part as usize] = 1;
        }
    }
    rows
}

/// Quantizes a 4/4 song onto the 16th-note grid.
pub fn quantize(song: &MidiSong) -> Result<BarStream> {
    if !song.is_four_four() {
        return Err(Error::NotFourFour);
    }
    let tpq = u64::from(song.ticks_per_quarter);
    let bar_ticks = 4 * tpq;
    let bars = song.end_tick.div_ceil(bar_ticks) as usize;
    let grid = Grid {
        ticks_per_quarter: tpq,
        steps: bars * STEPS_PER_BAR,
    };
    let bass = map_bass(&song.notes, grid);
    let drums = map_drums(&song.notes, grid);
    let mut stream = BarStream::new(bars);
    for t in 0..grid.steps {
        let dst = &mut stream.cells[t * PITCHES..(t + 1) * PITCHES];
        dst[..BASS_ROWS].copy_from_slice(&bass[t * BASS_ROWS..(t + 1) * BASS_ROWS]);
        dst[BASS_ROWS..].copy_from_slice(&drums[t * DRUM_ROWS..(t + 1) * DRUM_ROWS]);
    }
    Ok(stream)
}

/// Slides a `bars_per_phrase` window over the stream with a `stride_bars` hop.
/// Returns `(start_bar, phrase)` pairs; fewer bars than one window yields none.
pub fn window_phrases(stream: &BarStream, bars_per_phrase: usize, stride_bars: usize) -> Vec<(usize, PianorollPhrase)> {
    assert_eq!(bars_per_phrase, BARS_PER_PHRASE, "phrases are fixed at {BARS_PER_PHRASE} bars");
    assert!(stride_bars >= 1);
    if stream.bars < bars_per_phrase {
        return Vec::new();
    }
    (0..=stream.bars - bars_per_phrase)
        .step_by(stride_bars)
        .map(|start| {
            let cells = stream.cells[start * BAR_CELLS..(start + bars_per_phrase) * BAR_CELLS].to_vec();
            (start, PianorollPhrase { cells })
        })
        .collect()
}

/// Quantizes and windows one song into `corpus`, tagging phrases with `source`.
pub fn add_song(corpus: &mut Corpus, song: &MidiSong, source: u32) -> Result<usize> {
    let stream = quantize(song)?;
    let phrases = window_phrases(&stream, BARS_PER_PHRASE, 1);
    let n = phrases.len();
    for (start, phrase) in phrases {
        corpus.push(
            phrase,
            Provenance {
                source,
                start_bar: start as u32,
            },
        );
    }
    Ok(n)
}
