//! F0 ingestion and voice assignment: reads multi-F0 estimator CSVs, assigns
//! per-frame pitch values to persistent sources under a no-crossing
//! assumption with nearest-neighbor continuity, and resamples tracks onto
//! the synthesis frame grid.

use crate::error::{Error, Result};
use crate::synth::F0Track;
use std::path::Path;

/// How many frames to each side the continuity search may look for an
/// already-assigned anchor frame.
pub const SEARCH_WINDOW: usize = 50;

/// One frame of raw multi-F0 estimator output.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiF0Frame {
    /// Frame time in seconds.
    pub time: f64,
    /// The pitches present, in Hz; silent sources are simply absent.
    pub f0s: Vec<f64>,
}

/// Parsed contents of an F0 CSV, either raw estimator output or an already
/// voice-assigned table.
#[derive(Debug, Clone, PartialEq)]
pub enum F0File {
    /// Variable number of pitches per frame, unassigned.
    Raw(Vec<MultiF0Frame>),
    /// One column per source; 0 marks silence.
    Assigned {
        times: Vec<f64>,
        /// tracks[j][frame]
        tracks: Vec<Vec<f64>>,
    },
}

/// MIDI note number of a frequency, or None for silence (f <= 0).
pub fn hz_to_midi(f: f64) -> Option<f64> {
    if f > 0.0 {
        Some(69.0 + 12.0 * (f / 440.0).log2())
    } else {
        None
    }
}

/// Frequency of a MIDI note number.
pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * ((midi - 69.0) / 12.0).exp2()
}

/// Greedily match pitch values to the slots of a neighboring assigned frame
/// by ascending distance (ties toward the lower slot, then the lower value
/// index); returns slot index per value, usize::MAX for unmatched.
fn match_to_anchor(values: &[f64], anchor: &[f64]) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (vi, &v) in values.iter().enumerate() {
        for (si, &a) in anchor.iter().enumerate() {
            if a > 0.0 {
                pairs.push(((v - a).abs(), si, vi));
            }
        }
    }
    pairs.sort_by(|x, y| {
        x.0.partial_cmp(&y.0)
            .unwrap()
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    let mut slot_of = vec![usize::MAX; values.len()];
    let mut slot_used = vec![false; anchor.len()];
    let mut value_used = vec![false; values.len()];
    for (_, si, vi) in pairs {
        if !slot_used[si] && !value_used[vi] {
            slot_of[vi] = si;
            slot_used[si] = true;
            value_used[vi] = true;
        }
    }
    slot_of
}

/// Place values without an anchor: descending pitch into the lowest free
/// slots, mirroring the no-crossing order of fully voiced frames.
fn place_sorted(values: &[f64], assignment: &mut [f64]) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut next = 0usize;
    for v in sorted {
        while next < assignment.len() && assignment[next] != 0.0 {
            next += 1;
        }
        if next == assignment.len() {
            break;
        }
        assignment[next] = v;
        next += 1;
    }
}

/// Assign the pitches of every frame to `j` persistent sources. Fully voiced
/// frames (exactly `j` pitches) are sorted descending, source 0 highest.
/// Frames with fewer pitches match them to the nearest fully voiced frame
/// within the search window; frames with more keep the `j` values closest to
/// that anchor. Unmatched sources are silent (0).
pub fn assign_f0s(frames: &[MultiF0Frame], j: usize) -> Vec<Vec<f64>> {
    let n = frames.len();
    let mut out = vec![vec![0.0f64; n]; j];
    if n == 0 || j == 0 {
        return out;
    }
    // pass 1: fully voiced frames fix the voice order
    let mut resolved = vec![false; n];
    for (i, frame) in frames.iter().enumerate() {
        if frame.f0s.len() == j {
            let mut sorted = frame.f0s.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for (t, &v) in sorted.iter().enumerate() {
                out[t][i] = v;
            }
            resolved[i] = true;
        }
    }
    // pass 2: everything else leans on the nearest resolved frame
    for (i, frame) in frames.iter().enumerate() {
        if resolved[i] || frame.f0s.is_empty() {
            continue;
        }
        let anchor = (1..=SEARCH_WINDOW)
            .flat_map(|d| [i.checked_sub(d), i.checked_add(d).filter(|&k| k < n)])
            .flatten()
            .find(|&k| resolved[k]);
        let values = &frame.f0s;
        let mut assignment = vec![0.0f64; j];
        match anchor {
            Some(k) => {
                let anchor_vals: Vec<f64> = (0..j).map(|t| out[t][k]).collect();
                if values.len() <= j {
                    let slots = match_to_anchor(values, &anchor_vals);
                    let mut leftover = Vec::new();
                    for (vi, &v) in values.iter().enumerate() {
                        if slots[vi] != usize::MAX {
                            assignment[slots[vi]] = v;
                        } else {
                            leftover.push(v);
                        }
                    }
                    place_sorted(&leftover, &mut assignment);
                } else {
                    // keep the j values nearest to any anchor pitch, then
                    // order them like a fully voiced frame
                    let mut by_dist: Vec<(f64, f64)> = values
                        .iter()
                        .map(|&v| {
                            let d = anchor_vals
                                .iter()
                                .filter(|&&a| a > 0.0)
                                .map(|&a| (v - a).abs())
                                .fold(f64::INFINITY, f64::min);
                            (d, v)
                        })
                        .collect();
                    by_dist.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
                    let kept: Vec<f64> = by_dist.iter().take(j).map(|&(_, v)| v).collect();
                    place_sorted(&kept, &mut assignment);
                }
            }
            None => {
                let mut kept = values.clone();
                kept.sort_by(|a, b| b.partial_cmp(a).unwrap());
                kept.truncate(j);
                place_sorted(&kept, &mut assignment);
            }
        }
        for (t, &v) in assignment.iter().enumerate() {
            out[t][i] = v;
        }
    }
    out
}

/// Resample one per-time track onto the synthesis frame grid by nearest-time
/// lookup; an empty track yields silence.
pub fn resample_to_grid(
    times: &[f64],
    values: &[f64],
    hop: usize,
    fs: f64,
    num_frames: usize,
) -> Result<Vec<f64>> {
    if times.len() != values.len() {
        return Err(Error::shape(format!(
            "times ({}) and values ({}) differ",
            times.len(),
            values.len()
        )));
    }
    if times.is_empty() {
        return Ok(vec![0.0; num_frames]);
    }
    let mut out = Vec::with_capacity(num_frames);
    for i in 0..num_frames {
        let t = i as f64 * hop as f64 / fs;
        let idx = match times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(k) => k,
            Err(k) => {
                if k == 0 {
                    0
                } else if k == times.len() {
                    times.len() - 1
                } else if (t - times[k - 1]).abs() <= (times[k] - t).abs() {
                    k - 1
                } else {
                    k
                }
            }
        };
        out.push(values[idx]);
    }
    Ok(out)
}

/// Turn assigned per-time tracks into per-synthesis-frame F0 tracks.
pub fn tracks_on_grid(
    times: &[f64],
    tracks: &[Vec<f64>],
    hop: usize,
    fs: f64,
    num_frames: usize,
) -> Result<Vec<F0Track>> {
    tracks
        .iter()
        .enumerate()
        .map(|(j, tr)| {
            Ok(F0Track {
                f0_frames: resample_to_grid(times, tr, hop, fs, num_frames)?,
                source_index: j,
            })
        })
        .collect()
}

fn parse_field(path: &Path, row: usize, field: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Csv {
        path: path.to_path_buf(),
        reason: format!("row {row}: not a number: {field:?}"),
    })
}

/// Load an F0 CSV. Layout is detected from the header: `time,f0...` rows may
/// carry any number of pitches; `time,src0,...` rows carry exactly one value
/// per source with 0 for silence.
pub fn load_f0_csv(path: &Path) -> Result<F0File> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        rows.push(rec.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?);
    }
    if rows.is_empty() {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            reason: "empty file".into(),
        });
    }
    let header = &rows[0];
    if header.get(0).map(str::trim) != Some("time") {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            reason: format!("first header column must be 'time', got {:?}", header.get(0)),
        });
    }
    let assigned = header.get(1).map(str::trim) == Some("src0");
    if assigned {
        let j = header.len() - 1;
        for (k, col) in header.iter().skip(1).enumerate() {
            if col.trim() != format!("src{k}") {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    reason: format!("expected header column src{k}, got {col:?}"),
                });
            }
        }
        let mut times = Vec::new();
        let mut tracks = vec![Vec::new(); j];
        for (r, row) in rows.iter().enumerate().skip(1) {
            if row.len() != j + 1 {
                return Err(Error::Csv {
                    path: path.to_path_buf(),
                    reason: format!("row {r}: expected {} columns, got {}", j + 1, row.len()),
                });
            }
            times.push(parse_field(path, r, row.get(0).unwrap())?);
            for (k, track) in tracks.iter_mut().enumerate() {
                track.push(parse_field(path, r, row.get(k + 1).unwrap())?);
            }
        }
        check_ascending(path, &times)?;
        Ok(F0File::Assigned { times, tracks })
    } else {
        let mut frames = Vec::new();
        for (r, row) in rows.iter().enumerate().skip(1) {
            let mut iter = row.iter();
            let time = parse_field(path, r, iter.next().ok_or_else(|| Error::Csv {
                path: path.to_path_buf(),
                reason: format!("row {r}: empty"),
            })?)?;
            let mut f0s = Vec::new();
            for field in iter {
                if field.trim().is_empty() {
                    continue;
                }
                let v = parse_field(path, r, field)?;
                if v > 0.0 {
                    f0s.push(v);
                }
            }
            frames.push(MultiF0Frame { time, f0s });
        }
        check_ascending(path, &frames.iter().map(|f| f.time).collect::<Vec<_>>())?;
        Ok(F0File::Raw(frames))
    }
}

fn check_ascending(path: &Path, times: &[f64]) -> Result<()> {
    for w in times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                reason: format!("times must be strictly ascending ({} then {})", w[0], w[1]),
            });
        }
    }
    Ok(())
}

/// Write assigned tracks as `time,src0,...` CSV.
pub fn write_assigned_csv(path: &Path, times: &[f64], tracks: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut header = vec!["time".to_string()];
    header.extend((0..tracks.len()).map(|j| format!("src{j}")));
    let write_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    w.write_record(&header).map_err(write_err)?;
    for (i, &t) in times.iter().enumerate() {
        let mut row = vec![format!("{t}")];
        row.extend(tracks.iter().map(|tr| format!("{}", tr[i])));
        w.write_record(&row).map_err(write_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(time: f64, f0s: &[f64]) -> MultiF0Frame {
        MultiF0Frame {
            time,
            f0s: f0s.to_vec(),
        }
    }

    #[test]
    fn midi_conversion_anchors() {
        assert_eq!(hz_to_midi(440.0), Some(69.0));
        assert_eq!(hz_to_midi(880.0), Some(81.0));
        let c4 = hz_to_midi(261.626).unwrap();
        assert!((c4 - 60.0).abs() < 1e-3, "{c4}");
        assert_eq!(hz_to_midi(0.0), None);
        assert_eq!(hz_to_midi(-5.0), None);
        assert!((midi_to_hz(69.0) - 440.0).abs() < 1e-12);
        assert!((midi_to_hz(hz_to_midi(123.4).unwrap()) - 123.4).abs() < 1e-9);
    }

    #[test]
    fn fully_voiced_frames_sort_descending() {
        let tracks = assign_f0s(&[frame(0.0, &[220.0, 440.0])], 2);
        assert_eq!(tracks[0], vec![440.0]);
        assert_eq!(tracks[1], vec![220.0]);
    }

    #[test]
    fn partial_frame_matches_nearest_anchor_pitch() {
        let frames = [frame(0.0, &[220.0, 440.0]), frame(0.01, &[230.0])];
        let tracks = assign_f0s(&frames, 2);
        assert_eq!(tracks[0], vec![440.0, 0.0]);
        assert_eq!(tracks[1], vec![220.0, 230.0]);
    }

    #[test]
    fn empty_input_gives_all_zero_tracks() {
        let tracks = assign_f0s(&[], 2);
        assert_eq!(tracks.len(), 2);
        assert!(tracks.iter().all(|t| t.is_empty()));
    }

    #[test]
    fn silent_frames_stay_silent() {
        let frames = [frame(0.0, &[300.0, 200.0]), frame(0.01, &[])];
        let tracks = assign_f0s(&frames, 2);
        assert_eq!(tracks[0][1], 0.0);
        assert_eq!(tracks[1][1], 0.0);
    }

    #[test]
    fn every_pitch_lands_in_exactly_one_track() {
        let frames = [
            frame(0.00, &[150.0, 310.0]),
            frame(0.01, &[155.0]),
            frame(0.02, &[320.0, 160.0]),
            frame(0.03, &[330.0]),
            frame(0.04, &[]),
        ];
        let tracks = assign_f0s(&frames, 2);
        for (i, f) in frames.iter().enumerate() {
            let mut got: Vec<f64> = (0..2).map(|t| tracks[t][i]).filter(|&v| v > 0.0).collect();
            let mut want = f.f0s.clone();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got, want, "frame {i}");
        }
    }

    #[test]
    fn assignment_is_idempotent_on_fully_voiced_sorted_input() {
        let frames = [frame(0.0, &[400.0, 250.0]), frame(0.01, &[410.0, 240.0])];
        let tracks = assign_f0s(&frames, 2);
        assert_eq!(tracks[0], vec![400.0, 410.0]);
        assert_eq!(tracks[1], vec![250.0, 240.0]);
    }

    #[test]
    fn excess_pitches_keep_the_continuous_subset() {
        let frames = [
            frame(0.0, &[330.0, 440.0]),
            frame(0.01, &[100.0, 329.0, 441.0]),
        ];
        let tracks = assign_f0s(&frames, 2);
        assert_eq!(tracks[0][1], 441.0);
        assert_eq!(tracks[1][1], 329.0);
    }

    #[test]
    fn distance_ties_break_toward_lower_source_index() {
        let frames = [frame(0.0, &[240.0, 220.0]), frame(0.01, &[230.0])];
        let tracks = assign_f0s(&frames, 2);
        assert_eq!(tracks[0][1], 230.0);
        assert_eq!(tracks[1][1], 0.0);
    }

    #[test]
    fn no_anchor_places_descending_from_source_zero() {
        let frames = [frame(0.0, &[300.0]), frame(0.01, &[120.0, 310.0])];
        // second frame is fully voiced; first frame has an anchor to its
        // right; isolated single-pitch input with j=2 never gets one
        let tracks = assign_f0s(&frames[..1], 2);
        assert_eq!(tracks[0], vec![300.0]);
        assert_eq!(tracks[1], vec![0.0]);
    }

    #[test]
    fn anchor_search_respects_the_window() {
        let mut frames = vec![frame(0.0, &[220.0, 440.0])];
        for i in 1..=SEARCH_WINDOW + 1 {
            frames.push(frame(i as f64 * 0.01, &[]));
        }
        frames.push(frame(0.99, &[230.0]));
        let tracks = assign_f0s(&frames, 2);
        // the lone pitch sits SEARCH_WINDOW+1 frames from the anchor, so it
        // falls back to descending placement at source 0
        let last = frames.len() - 1;
        assert_eq!(tracks[0][last], 230.0);
        assert_eq!(tracks[1][last], 0.0);
    }

    #[test]
    fn nearest_time_resampling_picks_closest_sample() {
        let times = [0.0, 0.1, 0.2];
        let values = [100.0, 200.0, 300.0];
        let got = resample_to_grid(&times, &values, 256, 16_000.0, 14).unwrap();
        // frame times are i*0.016 s
        assert_eq!(got[0], 100.0);
        assert_eq!(got[3], 100.0); // 0.048 is nearer to 0.0 than to 0.1
        assert_eq!(got[4], 200.0); // 0.064 is nearer to 0.1
        assert_eq!(got[13], 300.0); // 0.208 clamps to the last sample
    }

    #[test]
    fn resampling_empty_track_is_silent() {
        let got = resample_to_grid(&[], &[], 256, 16_000.0, 5).unwrap();
        assert_eq!(got, vec![0.0; 5]);
    }

    #[test]
    fn raw_csv_roundtrip_through_loader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f0.csv");
        std::fs::write(&path, "time,f0\n0.0,220.0,440.0\n0.016,230.5\n0.032\n").unwrap();
        let file = load_f0_csv(&path).unwrap();
        match file {
            F0File::Raw(frames) => {
                assert_eq!(frames.len(), 3);
                assert_eq!(frames[0].f0s, vec![220.0, 440.0]);
                assert_eq!(frames[1].f0s, vec![230.5]);
                assert!(frames[2].f0s.is_empty());
            }
            other => panic!("expected raw layout, got {other:?}"),
        }
    }

    #[test]
    fn assigned_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("assigned.csv");
        let times = vec![0.0, 0.016, 0.032];
        let tracks = vec![vec![440.0, 441.5, 0.0], vec![220.0, 0.0, 221.0]];
        write_assigned_csv(&path, &times, &tracks).unwrap();
        let file = load_f0_csv(&path).unwrap();
        assert_eq!(
            file,
            F0File::Assigned {
                times,
                tracks
            }
        );
    }

    #[test]
    fn malformed_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bad_number = dir.path().join("bad.csv");
        std::fs::write(&bad_number, "time,f0\n0.0,abc\n").unwrap();
        assert!(load_f0_csv(&bad_number).is_err());
        let bad_header = dir.path().join("hdr.csv");
        std::fs::write(&bad_header, "frequency,f0\n0.0,220.0\n").unwrap();
        assert!(load_f0_csv(&bad_header).is_err());
        let bad_order = dir.path().join("ord.csv");
        std::fs::write(&bad_order, "time,f0\n0.1,220.0\n0.05,220.0\n").unwrap();
        assert!(load_f0_csv(&bad_order).is_err());
        let ragged = dir.path().join("ragged.csv");
        std::fs::write(&ragged, "time,src0,src1\n0.0,220.0\n").unwrap();
        assert!(load_f0_csv(&ragged).is_err());
    }

    #[test]
    fn grid_tracks_carry_source_indices() {
        let times = vec![0.0, 0.016];
        let tracks = vec![vec![440.0, 441.0], vec![220.0, 219.0]];
        let grid = tracks_on_grid(&times, &tracks, 256, 16_000.0, 3).unwrap();
        assert_eq!(grid.len(), 2);
        assert_eq!(grid[0].source_index, 0);
        assert_eq!(grid[1].source_index, 1);
        assert_eq!(grid[0].f0_frames, vec![440.0, 441.0, 441.0]);
        assert_eq!(grid[1].f0_frames, vec![220.0, 219.0, 219.0]);
    }
}
