//! Synthetic bass+drum material: loop-structured and unstructured phrases,
//! and multi-bar songs rendered to MIDI.

use ndiff::Rng;
use rand::Rng as _;

use crate::error::Result;
use crate::midi::write_bar_stream;
use crate::pianoroll::{BarStream, DrumPart, PianorollPhrase, BARS_PER_PHRASE, STEPS_PER_BAR};

const SCALE: [usize; 7] = [0, 2, 3, 5, 7, 8, 10];

/// One bar of bass and drums written into `phrase` at bar `bar`.
fn write_bar(phrase: &mut PianorollPhrase, bar: usize, root: usize, rng: &mut Rng) {
    let base = bar * STEPS_PER_BAR;
    let mut t = 0;
    while t < STEPS_PER_BAR {
        let len = [2, 2, 4, 4, 8][rng.random_range(0..5)].min(STEPS_PER_BAR - t);
        if rng.random_bool(0.8) {
            let row = root + SCALE[rng.random_range(0..SCALE.len())];
            for s in t..t + len {
                phrase.set(base + s, row, true);
            }
        }
        t += len;
    }
    for s in 0..STEPS_PER_BAR {
        let on = |part: DrumPart, phrase: &mut PianorollPhrase| phrase.set(base + s, part.row(), true);
        if s % 8 == 0 || (s % 2 == 0 && rng.random_bool(0.15)) {
            on(DrumPart::Kick, phrase);
        }
        if s % 8 == 4 {
            on(DrumPart::Snare, phrase);
        }
        if s % 2 == 0 && rng.random_bool(0.8) {
            on(DrumPart::ClosedHat, phrase);
        } else if s % 4 == 2 && rng.random_bool(0.1) {
            on(DrumPart::OpenHat, phrase);
        }
    }
    if rng.random_bool(0.2) {
        phrase.set(base, DrumPart::Crash.row(), true);
    }
}

/// Phrase that repeats a 1-, 2- or 4-bar pattern.
pub fn loop_phrase(rng: &mut Rng) -> PianorollPhrase {
    let period = [1, 2, 4][rng.random_range(0..3)];
    let root = rng.random_range(4..20);
    let mut pattern = PianorollPhrase::empty();
    for bar in 0..period {
        write_bar(&mut pattern, bar, root, rng);
    }
    let mut out = PianorollPhrase::empty();
    let bar_steps = STEPS_PER_BAR;
    for bar in 0..BARS_PER_PHRASE {
        let src = (bar % period) * bar_steps;
        for s in 0..bar_steps {
            for row in 0..crate::pianoroll::PITCHES {
                if pattern.get(src + s, row) {
                    out.set(bar * bar_steps + s, row, true);
                }
            }
        }
    }
    out
}

/// Phrase whose eight bars are drawn independently.
pub fn random_phrase(rng: &mut Rng) -> PianorollPhrase {
    let mut out = PianorollPhrase::empty();
    for bar in 0..BARS_PER_PHRASE {
        let root = rng.random_range(4..20);
        write_bar(&mut out, bar, root, rng);
    }
    out
}

/// `bars`-bar song built from loop phrases, mostly, with some free sections.
pub fn song(bars: usize, rng: &mut Rng) -> BarStream {
    let phrases: Vec<PianorollPhrase> = (0..bars.div_ceil(BARS_PER_PHRASE))
        .map(|_| if rng.random_bool(0.75) { loop_phrase(rng) } else { random_phrase(rng) })
        .collect();
    let mut stream = BarStream::from_phrases(&phrases);
    stream.truncate(bars);
    stream
}

/// A synthetic song as Standard MIDI File bytes.
pub fn song_midi(bars: usize, bpm: f64, rng: &mut Rng) -> Result<Vec<u8>> {
    write_bar_stream(&song(bars, rng), bpm, 33)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::midi_correlation;
    use crate::midi::parse_midi;
    use crate::pianoroll::quantize;
    use ndiff::rng::rng_from;

    #[test]
    fn loop_phrases_repeat() {
        let mut rng = rng_from(1);
        for _ in 0..20 {
            let m = midi_correlation(&loop_phrase(&mut rng));
            assert_eq!(m.get(0, 4), 1.0);
            assert_eq!(m.get(3, 7), 1.0);
        }
    }

    #[test]
    fn songs_survive_midi() {
        let mut rng = rng_from(2);
        let stream = song(12, &mut rng);
        assert_eq!(stream.bars(), 12);
        let bytes = write_bar_stream(&stream, 120.0, 33).unwrap();
        let back = quantize(&parse_midi(&bytes).unwrap()).unwrap();
        assert_eq!(back.bars(), 12);
        assert_eq!(back.cells(), stream.cells());
    }
}
