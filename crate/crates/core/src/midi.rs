//! Standard MIDI File reading (formats 0 and 1) and loop rendering (format 1).

use crate::error::{Error, Result};
use crate::pianoroll::{
    BarStream, DrumPart, PianorollPhrase, BASS_LOWEST_PITCH, BASS_ROWS, DRUM_ROWS, PHRASE_STEPS,
};

pub const DRUM_CHANNEL: u8 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Note {
    pub track: u16,
    pub channel: u8,
    pub program: u8,
    pub is_drum: bool,
    pub pitch: u8,
    pub velocity: u8,
    pub onset: u64,
    pub duration: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TempoEvent {
    pub tick: u64,
    pub us_per_quarter: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSignature {
    pub tick: u64,
    pub numerator: u8,
    pub denominator: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MidiSong {
    pub ticks_per_quarter: u16,
    pub tempo_events: Vec<TempoEvent>,
    pub time_signatures: Vec<TimeSignature>,
    /// Sorted by onset, then track, channel and pitch.
    pub notes: Vec<Note>,
    /// Latest event tick over all tracks.
    pub end_tick: u64,
}

impl MidiSong {
    /// True when every time signature is 4/4; a song without any counts as 4/4.
    pub fn is_four_four(&self) -> bool {
        self.time_signatures
            .iter()
            .all(|ts| ts.numerator == 4 && ts.denominator == 4)
    }
}

pub fn is_four_four(song: &MidiSong) -> bool {
    song.is_four_four()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::midi(self.pos, format!("truncated: need {n} bytes, {} left", self.remaining())));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(Error::midi(start, "variable-length quantity longer than 4 bytes"))
    }
}

/// Parses a format 0 or 1 Standard MIDI File.
pub fn parse_midi(bytes: &[u8]) -> Result<MidiSong> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::midi(0, "missing MThd header"))? != b"MThd" {
        return Err(Error::midi(0, "missing MThd header"));
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(Error::midi(4, format!("header length {header_len} < 6")));
    }
    let format = r.u16()?;
    match format {
        0 | 1 => {}
        2 => return Err(Error::midi(8, "format 2 is not supported")),
        f => return Err(Error::midi(8, format!("unknown format {f}"))),
    }
    let _declared_tracks = r.u16()?;
    let division = r.u16()?;
    if division & 0x8000 != 0 {
        return Err(Error::midi(12, "SMPTE time division is not supported"));
    }
    if division == 0 {
        return Err(Error::midi(12, "zero ticks per quarter note"));
    }
    r.take(header_len - 6)?;

    let mut song = MidiSong {
        ticks_per_quarter: division,
        tempo_events: Vec::new(),
        time_signatures: Vec::new(),
        notes: Vec::new(),
        end_tick: 0,
    };
    let mut track_index: u16 = 0;
    while r.remaining() > 0 {
        let chunk_start = r.pos;
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        if len > r.remaining() {
            return Err(Error::midi(chunk_start, format!("chunk of {len} bytes is truncated")));
        }
        let body_start = r.pos;
        let body = r.take(len)?;
        if id == b"MTrk" {
            parse_track(body, body_start, track_index, &mut song)?;
            track_index = track_index.saturating_add(1);
        }
    }
    song.notes
        .sort_by_key(|n| (n.onset, n.track, n.channel, n.pitch, n.duration));
    song.tempo_events.sort_by_key(|e| e.tick);
    song.time_signatures.sort_by_key(|e| e.tick);
    Ok(song)
}

#[derive(Clone, Copy)]
struct Sounding {
    onset: u64,
    velocity: u8,
    program: u8,
}

fn parse_track(body: &[u8], base: usize, track: u16, song: &mut MidiSong) -> Result<()> {
    let mut r = Reader { bytes: body, pos: 0 };
    let rebase = |e: Error| match e {
        Error::Midi { offset, msg } => Error::midi(base + offset, msg),
        other => other,
    };
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut programs = [0u8; 16];
    let mut sounding: Vec<Option<Sounding>> = vec![None; 16 * 128];

    let close = |song: &mut MidiSong, channel: u8, pitch: u8, s: Sounding, at: u64| {
        song.notes.push(Note {
            track,
            channel,
            program: s.program,
            is_drum: channel == DRUM_CHANNEL,
            pitch,
            velocity: s.velocity,
            onset: s.onset,
            duration: at.saturating_sub(s.onset).max(1),
        });
    };

    while r.remaining() > 0 {
        let delta = r.vlq().map_err(rebase)?;
        tick = tick.saturating_add(u64::from(delta));
        let event_start = r.pos;
        let first = r.u8().map_err(rebase)?;
        match first {
            0xff => {
                running = None;
                let kind = r.u8().map_err(rebase)?;
                let len = r.vlq().map_err(rebase)? as usize;
                let data = r.take(len).map_err(rebase)?;
                match kind {
                    0x2f => break,
                    0x51 if len >= 3 => song.tempo_events.push(TempoEvent {
                        tick,
                        us_per_quarter: u32::from_be_bytes([0, data[0], data[1], data[2]]),
                    }),
                    0x58 if len >= 2 => {
                        if data[1] > 31 {
                            return Err(Error::midi(base + event_start, "time signature denominator out of range"));
                        }
                        song.time_signatures.push(TimeSignature {
                            tick,
                            numerator: data[0],
                            denominator: 1u32 << data[1],
                        })
                    }
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.vlq().map_err(rebase)? as usize;
                r.take(len).map_err(rebase)?;
            }
            0xf1..=0xfe => {
                return Err(Error::midi(base + event_start, format!("unexpected status byte {first:#04x}")));
            }
            _ => {
                let (status, data1) = if first & 0x80 != 0 {
                    running = Some(first);
                    (first, r.u8().map_err(rebase)?)
                } else {
                    match running {
                        Some(s) => (s, first),
                        None => {
                            return Err(Error::midi(base + event_start, "data byte without running status"))
                        }
                    }
                };
                if data1 & 0x80 != 0 {
                    return Err(Error::midi(base + event_start, "data byte has its high bit set"));
                }
                let channel = status & 0x0f;
                let needs_second = !matches!(status & 0xf0, 0xc0 | 0xd0);
                let data2 = if needs_second { r.u8().map_err(rebase)? } else { 0 };
                let slot = usize::from(channel) * 128 + usize::from(data1);
                match status & 0xf0 {
                    0x90 if data2 > 0 => {
                        if let Some(prev) = sounding[slot].take() {
                            close(song, channel, data1, prev, tick);
                        }
                        sounding[slot] = Some(Sounding {
                            onset: tick,
                            velocity: data2.min(127),
                            program: programs[usize::from(channel)],
                        });
                    }
                    0x80 | 0x90 => {
                        if let Some(prev) = sounding[slot].take() {
                            close(song, channel, data1, prev, tick);
                        }
                    }
                    0xc0 => programs[usize::from(channel)] = data1,
                    _ => {}
                }
            }
        }
    }
    for (slot, s) in sounding.iter().enumerate() {
        if let Some(s) = s {
            close(song, (slot / 128) as u8, (slot % 128) as u8, *s, tick);
        }
    }
    song.end_tick = song.end_tick.max(tick);
    Ok(())
}

/// Rendering request for one generated phrase.
#[derive(Debug, Clone)]
pub struct LoopWriteSpec {
    pub phrase: PianorollPhrase,
    pub bpm: f64,
    pub repeats: u32,
    pub bass_program: u8,
}

impl LoopWriteSpec {
    pub fn new(phrase: PianorollPhrase) -> Self {
        LoopWriteSpec {
            phrase,
            bpm: 120.0,
            repeats: 1,
            bass_program: 33,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bpm > 0.0 && self.bpm.is_finite()) {
            return Err(Error::invalid(format!("bpm must be positive, got {}", self.bpm)));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("repeats must be at least 1"));
        }
        if self.bass_program > 127 {
            return Err(Error::invalid("bass program must be 0-127"));
        }
        Ok(())
    }
}

pub const WRITE_TICKS_PER_QUARTER: u16 = 480;
const STEP_TICKS: u64 = WRITE_TICKS_PER_QUARTER as u64 / 4;
const DRUM_TICKS: u64 = STEP_TICKS / 2;
const VELOCITY: u8 = 100;

/// Renders a phrase as a format-1 file: a tempo track, bass on channel 0 and
/// drums on channel 9, the phrase repeated `repeats` times.
pub fn write_midi(spec: &LoopWriteSpec) -> Result<Vec<u8>> {
    spec.validate()?;
    Ok(render(
        |step, row| spec.phrase.get(step, row),
        PHRASE_STEPS,
        spec.repeats,
        spec.bpm,
        spec.bass_program,
    ))
}

/// Renders a whole bar stream once, in the same layout as [`write_midi`].
pub fn write_bar_stream(stream: &BarStream, bpm: f64, bass_program: u8) -> Result<Vec<u8>> {
    LoopWriteSpec {
        phrase: PianorollPhrase::empty(),
        bpm,
        repeats: 1,
        bass_program,
    }
    .validate()?;
    Ok(render(|step, row| stream.get(step, row), stream.steps(), 1, bpm, bass_program))
}

fn render(get: impl Fn(usize, usize) -> bool, steps: usize, repeats: u32, bpm: f64, bass_program: u8) -> Vec<u8> {
    let span = steps as u64 * STEP_TICKS;
    let total = span * u64::from(repeats);
    let bass_at = |t: usize| (0..BASS_ROWS).find(|&r| get(t, r));

    let us_per_quarter = (60_000_000.0 / bpm).round().clamp(1.0, f64::from(0x00ff_ffff)) as u32;
    let tempo = vec![(0, vec![0xff, 0x51, 0x03, (us_per_quarter >> 16) as u8, (us_per_quarter >> 8) as u8, us_per_quarter as u8])];

    let mut bass = vec![(0u64, vec![0xc0, bass_program])];
    let mut drums = Vec::new();
    for rep in 0..u64::from(repeats) {
        let base = rep * span;
        let mut t = 0;
        while t < steps {
            let Some(row) = bass_at(t) else {
                t += 1;
                continue;
            };
            let start = t;
            while t < steps && bass_at(t) == Some(row) {
                t += 1;
            }
            let pitch = BASS_LOWEST_PITCH + row as u8;
            bass.push((base + start as u64 * STEP_TICKS, vec![0x90, pitch, VELOCITY]));
            bass.push((base + t as u64 * STEP_TICKS, vec![0x80, pitch, 0x40]));
        }
        for step in 0..steps {
            for part in DrumPart::ALL {
                if get(step, part.row()) {
                    let on = base + step as u64 * STEP_TICKS;
                    let pitch = part.gm_pitch();
                    drums.push((on, vec![0x90 | DRUM_CHANNEL, pitch, VELOCITY]));
                    drums.push((on + DRUM_TICKS, vec![0x80 | DRUM_CHANNEL, pitch, 0x40]));
                }
            }
        }
    }
    debug_assert_eq!(DrumPart::ALL.len(), DRUM_ROWS);

    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&3u16.to_be_bytes());
    out.extend_from_slice(&WRITE_TICKS_PER_QUARTER.to_be_bytes());
    for events in [tempo, bass, drums] {
        write_track(&mut out, events, total);
    }
    out
}

/// Serializes events sorted by tick, note-offs before note-ons at equal ticks,
/// with the end-of-track marker at `end`.
fn write_track(out: &mut Vec<u8>, mut events: Vec<(u64, Vec<u8>)>, end: u64) {
    events.sort_by_key(|(tick, msg)| (*tick, msg[0] & 0xf0 == 0x90));
    let mut body = Vec::new();
    let mut last = 0;
    for (tick, msg) in events {
        write_vlq(&mut body, (tick - last) as u32);
        body.extend_from_slice(&msg);
        last = tick;
    }
    write_vlq(&mut body, end.saturating_sub(last) as u32);
    body.extend_from_slice(&[0xff, 0x2f, 0x00]);
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
}

fn write_vlq(out: &mut Vec<u8>, value: u32) {
    let mut groups = [0u8; 5];
    let mut n = 0;
    let mut v = value;
    loop {
        groups[n] = (v & 0x7f) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(groups[i] | if i > 0 { 0x80 } else { 0 });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds an SMF with the given format and raw track bodies.
    pub(crate) fn smf(format: u16, tpq: u16, tracks: &[&[u8]]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&format.to_be_bytes());
        out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&tpq.to_be_bytes());
        for t in tracks {
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(t.len() as u32).to_be_bytes());
            out.extend_from_slice(t);
        }
        out
    }

    #[test]
    fn bad_magic_fails_at_offset_zero() {
        let mut bytes = smf(0, 480, &[&[0x00, 0xff, 0x2f, 0x00]]);
        bytes[..4].copy_from_slice(b"XXXX");
        match parse_midi(&bytes) {
            Err(Error::Midi { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_note_hand_assembled() {
        // delta 0: note-on ch0 pitch 36 vel 100; delta 480 (0x83 0x60): note-off; end of track.
        let track = [0x00, 0x90, 36, 100, 0x83, 0x60, 0x80, 36, 0, 0x00, 0xff, 0x2f, 0x00];
        let song = parse_midi(&smf(0, 480, &[&track])).unwrap();
        assert_eq!(song.ticks_per_quarter, 480);
        assert_eq!(song.notes.len(), 1);
        let n = song.notes[0];
        assert_eq!((n.pitch, n.onset, n.duration, n.velocity), (36, 0, 480, 100));
        assert!(!n.is_drum);
    }

    #[test]
    fn empty_track() {
        let song = parse_midi(&smf(0, 96, &[&[0x00, 0xff, 0x2f, 0x00]])).unwrap();
        assert!(song.notes.is_empty());
    }

    #[test]
    fn running_status_and_velocity_zero_off() {
        // note-on 40, then running-status note-on 40 vel 0 (= off), then note-on 43 / off
        let track = [
            0x00, 0x99, 40, 90, 0x60, 40, 0, 0x00, 43, 80, 0x60, 43, 0, 0x00, 0xff, 0x2f, 0x00,
        ];
        let song = parse_midi(&smf(0, 96, &[&track])).unwrap();
        assert_eq!(song.notes.len(), 2);
        assert!(song.notes.iter().all(|n| n.is_drum && n.duration == 0x60));
        assert_eq!(song.notes[1].onset, 0x60);
    }

    #[test]
    fn overlapping_same_pitch_closes_first() {
        let track = [
            0x00, 0x90, 50, 90, 0x10, 0x90, 50, 90, 0x10, 0x80, 50, 0, 0x00, 0xff, 0x2f, 0x00,
        ];
        let song = parse_midi(&smf(0, 96, &[&track])).unwrap();
        let d: Vec<(u64, u64)> = song.notes.iter().map(|n| (n.onset, n.duration)).collect();
        assert_eq!(d, vec![(0, 0x10), (0x10, 0x10)]);
    }

    #[test]
    fn unterminated_notes_close_at_track_end() {
        let track = [0x00, 0x90, 50, 90, 0x40, 0xff, 0x2f, 0x00];
        let song = parse_midi(&smf(0, 96, &[&track])).unwrap();
        assert_eq!(song.notes[0].duration, 0x40);
    }

    #[test]
    fn program_is_recorded_per_channel() {
        let track = [0x00, 0xc1, 33, 0x00, 0x91, 30, 90, 0x10, 0x81, 30, 0, 0x00, 0xff, 0x2f, 0x00];
        let song = parse_midi(&smf(0, 96, &[&track])).unwrap();
        assert_eq!((song.notes[0].program, song.notes[0].channel), (33, 1));
    }

    #[test]
    fn format_two_rejected() {
        assert!(matches!(
            parse_midi(&smf(2, 96, &[])),
            Err(Error::Midi { offset: 8, .. })
        ));
    }

    #[test]
    fn truncated_chunk_reports_offset() {
        let mut bytes = smf(0, 96, &[&[0x00, 0xff, 0x2f, 0x00]]);
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(parse_midi(&bytes), Err(Error::Midi { offset: 14, .. })));
    }

    #[test]
    fn time_signatures() {
        let ts = |n: u8, d: u8| [0x00, 0xff, 0x58, 0x04, n, d, 24, 8];
        let mut t = Vec::new();
        t.extend_from_slice(&ts(4, 2));
        t.extend_from_slice(&ts(6, 3));
        t.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        let song = parse_midi(&smf(0, 96, &[&t])).unwrap();
        assert!(!song.is_four_four());
        assert_eq!(song.time_signatures[1].denominator, 8);

        let mut one = ts(3, 2).to_vec();
        one.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        assert!(!parse_midi(&smf(0, 96, &[&one])).unwrap().is_four_four());
        assert!(parse_midi(&smf(0, 96, &[&[0x00, 0xff, 0x2f, 0x00]])).unwrap().is_four_four());
    }

    #[test]
    fn vlq_encoding() {
        for (v, bytes) in [(0u32, vec![0x00]), (0x7f, vec![0x7f]), (0x80, vec![0x81, 0x00]), (480, vec![0x83, 0x60])] {
            let mut out = Vec::new();
            write_vlq(&mut out, v);
            assert_eq!(out, bytes);
        }
    }

    #[test]
    fn empty_phrase_writes_tempo_and_program_only() {
        let bytes = write_midi(&LoopWriteSpec::new(PianorollPhrase::empty())).unwrap();
        let song = parse_midi(&bytes).unwrap();
        assert!(song.notes.is_empty());
        assert_eq!(song.tempo_events.len(), 1);
        assert_eq!(song.tempo_events[0].us_per_quarter, 500_000);
        assert_eq!(song.end_tick, 128 * 120);
    }

    #[test]
    fn single_kick() {
        let mut p = PianorollPhrase::empty();
        p.set(0, DrumPart::Kick.row(), true);
        let song = parse_midi(&write_midi(&LoopWriteSpec::new(p)).unwrap()).unwrap();
        assert_eq!(song.notes.len(), 1);
        let n = song.notes[0];
        assert_eq!((n.channel, n.pitch, n.onset), (9, 36, 0));
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = LoopWriteSpec::new(PianorollPhrase::empty());
        spec.bpm = 0.0;
        assert!(write_midi(&spec).is_err());
        spec.bpm = 120.0;
        spec.repeats = 0;
        assert!(write_midi(&spec).is_err());
    }
}
