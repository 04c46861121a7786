//! Manifest and frame-annotation CSV parsing.
//!
//! Manifest: `video_id,label,num_frames,feature_path`, one video per line.
//! Annotations: `video_id,start_frame,end_frame`, inclusive 0-indexed
//! intervals; only anomalous test videos have rows.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use super::{Label, Manifest, ManifestEntry, Split};
use crate::error::{Error, Result};

const MANIFEST_HEADER: &str = "video_id,label,num_frames,feature_path";
const ANNOTATIONS_HEADER: &str = "video_id,start_frame,end_frame";

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn load_manifest(path: impl AsRef<Path>, split: Split) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    match lines.next() {
        Some((_, header)) if header.trim() == MANIFEST_HEADER => {}
        Some((_, header)) => {
            return Err(parse_err(
                path,
                1,
                format!("bad header {header:?}, expected {MANIFEST_HEADER:?}"),
            ))
        }
        None => return Err(parse_err(path, 1, "empty manifest")),
    }

    let mut entries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 4 comma-separated fields, got {}", fields.len()),
            ));
        }
        let video_id = fields[0].trim().to_string();
        if video_id.is_empty() {
            return Err(parse_err(path, line_no, "empty video_id"));
        }
        if !seen.insert(video_id.clone()) {
            return Err(parse_err(
                path,
                line_no,
                format!("duplicate video_id {video_id:?}"),
            ));
        }
        let label = fields[1]
            .trim()
            .parse::<u8>()
            .ok()
            .and_then(|v| Label::from_u8(v).ok())
            .ok_or_else(|| parse_err(path, line_no, "label must be 0 or 1"))?;
        let num_frames: usize = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad num_frames {:?}", fields[2])))?;
        if num_frames == 0 {
            return Err(parse_err(path, line_no, "num_frames must be >= 1"));
        }
        let feature_path = fields[3].trim().to_string();
        if feature_path.is_empty() {
            return Err(parse_err(path, line_no, "empty feature_path"));
        }
        entries.push(ManifestEntry {
            video_id,
            label,
            num_frames,
            feature_path,
        });
    }

    Ok(Manifest {
        entries,
        split,
        base_dir: path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf(),
    })
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in &manifest.entries {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.video_id,
            e.label.as_u8(),
            e.num_frames,
            e.feature_path
        ));
    }
    crate::binio::atomic_write(path.as_ref(), |buf| {
        buf.extend_from_slice(out.as_bytes());
        Ok(())
    })
}

/// Frame-level ground truth for the test split: per video, inclusive
/// 0-indexed anomalous intervals.
#[derive(Debug, Clone, Default)]
pub struct FrameAnnotations {
    intervals: BTreeMap<String, Vec<(usize, usize)>>,
}

impl FrameAnnotations {
    /// Intervals for one video; absent or empty means all-normal.
    pub fn intervals(&self, video_id: &str) -> &[(usize, usize)] {
        self.intervals.get(video_id).map_or(&[], |v| v.as_slice())
    }

    pub fn insert(&mut self, video_id: String, interval: (usize, usize)) {
        self.intervals.entry(video_id).or_default().push(interval);
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// Parse annotations and validate them against the test manifest: known
/// video ids, intervals inside [0, num_frames), no overlaps.
pub fn load_annotations(path: impl AsRef<Path>, manifest: &Manifest) -> Result<FrameAnnotations> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    match lines.next() {
        Some((_, header)) if header.trim() == ANNOTATIONS_HEADER => {}
        Some((_, header)) => {
            return Err(parse_err(
                path,
                1,
                format!("bad header {header:?}, expected {ANNOTATIONS_HEADER:?}"),
            ))
        }
        None => return Err(parse_err(path, 1, "empty annotations file")),
    }

    let frames_by_id: HashMap<&str, usize> = manifest
        .entries
        .iter()
        .map(|e| (e.video_id.as_str(), e.num_frames))
        .collect();

    let mut ann = FrameAnnotations::default();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 3 comma-separated fields, got {}", fields.len()),
            ));
        }
        let video_id = fields[0].trim();
        let num_frames = *frames_by_id
            .get(video_id)
            .ok_or_else(|| parse_err(path, line_no, format!("unknown video_id {video_id:?}")))?;
        let start: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad start_frame {:?}", fields[1])))?;
        let end: usize = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("bad end_frame {:?}", fields[2])))?;
        if start > end || end >= num_frames {
            return Err(parse_err(
                path,
                line_no,
                format!(
                    "interval ({start}, {end}) out of range for {video_id:?} with {num_frames} frames"
                ),
            ));
        }
        ann.insert(video_id.to_string(), (start, end));
    }

    // Overlap check per video after collecting everything.
    for (video_id, intervals) in &mut ann.intervals {
        intervals.sort_unstable();
        for w in intervals.windows(2) {
            if w[1].0 <= w[0].1 {
                return Err(Error::Config(format!(
                    "overlapping annotation intervals {:?} and {:?} for video {video_id:?}",
                    w[0], w[1]
                )));
            }
        }
    }
    Ok(ann)
}

pub fn save_annotations(path: impl AsRef<Path>, ann: &FrameAnnotations) -> Result<()> {
    let mut out = String::from(ANNOTATIONS_HEADER);
    out.push('\n');
    for (video_id, intervals) in &ann.intervals {
        for (start, end) in intervals {
            out.push_str(&format!("{video_id},{start},{end}\n"));
        }
    }
    crate::binio::atomic_write(path.as_ref(), |buf| {
        buf.extend_from_slice(out.as_bytes());
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_line_manifest_parses() {
        let f = write_tmp(
            "video_id,label,num_frames,feature_path\nvid_a,0,160,features/a.clws\nvid_b,1,320,features/b.clws\n",
        );
        let m = load_manifest(f.path(), Split::Train).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].video_id, "vid_a");
        assert_eq!(m.entries[1].label, Label::Abnormal);
        assert_eq!(m.entries[1].num_frames, 320);
    }

    #[test]
    fn duplicate_id_names_the_id() {
        let f = write_tmp(
            "video_id,label,num_frames,feature_path\nvid_a,0,160,a.clws\nvid_a,1,320,b.clws\n",
        );
        let err = load_manifest(f.path(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("vid_a"), "{err}");
    }

    #[test]
    fn bad_label_message() {
        let f = write_tmp("video_id,label,num_frames,feature_path\nvid_a,2,160,a.clws\n");
        let err = load_manifest(f.path(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("label must be 0 or 1"), "{err}");
    }

    #[test]
    fn error_carries_line_number() {
        let f = write_tmp(
            "video_id,label,num_frames,feature_path\nvid_a,0,160,a.clws\nvid_b,1,nope,b.clws\n",
        );
        let err = load_manifest(f.path(), Split::Train).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_manifest("/nonexistent/manifest.csv", Split::Train),
            Err(Error::Io(_))
        ));
    }

    #[test]
    fn manifest_round_trip_bytes() {
        let f = write_tmp(
            "video_id,label,num_frames,feature_path\nvid_a,0,160,a.clws\nvid_b,1,320,b.clws\n",
        );
        let m = load_manifest(f.path(), Split::Train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out1 = dir.path().join("m1.csv");
        save_manifest(&out1, &m).unwrap();
        let reread = load_manifest(&out1, Split::Train).unwrap();
        let out2 = dir.path().join("m2.csv");
        save_manifest(&out2, &reread).unwrap();
        assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());
    }

    #[test]
    fn annotations_parse_and_validate() {
        let mf = write_tmp(
            "video_id,label,num_frames,feature_path\nvid_a,1,160,a.clws\nvid_b,0,160,b.clws\n",
        );
        let manifest = load_manifest(mf.path(), Split::Test).unwrap();
        let af = write_tmp("video_id,start_frame,end_frame\nvid_a,10,20\nvid_a,40,40\n");
        let ann = load_annotations(af.path(), &manifest).unwrap();
        assert_eq!(ann.intervals("vid_a"), &[(10, 20), (40, 40)]);
        assert!(ann.intervals("vid_b").is_empty());
    }

    #[test]
    fn annotations_out_of_range_rejected() {
        let mf = write_tmp("video_id,label,num_frames,feature_path\nvid_a,1,100,a.clws\n");
        let manifest = load_manifest(mf.path(), Split::Test).unwrap();
        let af = write_tmp("video_id,start_frame,end_frame\nvid_a,90,100\n");
        assert!(load_annotations(af.path(), &manifest).is_err());
    }

    #[test]
    fn annotations_overlap_rejected() {
        let mf = write_tmp("video_id,label,num_frames,feature_path\nvid_a,1,100,a.clws\n");
        let manifest = load_manifest(mf.path(), Split::Test).unwrap();
        let af = write_tmp("video_id,start_frame,end_frame\nvid_a,10,30\nvid_a,25,40\n");
        assert!(load_annotations(af.path(), &manifest).is_err());
    }

    #[test]
    fn annotations_unknown_video_rejected() {
        let mf = write_tmp("video_id,label,num_frames,feature_path\nvid_a,1,100,a.clws\n");
        let manifest = load_manifest(mf.path(), Split::Test).unwrap();
        let af = write_tmp("video_id,start_frame,end_frame\nghost,1,2\n");
        let err = load_annotations(af.path(), &manifest).unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }
}
