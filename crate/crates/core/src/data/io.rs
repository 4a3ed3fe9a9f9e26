//! Line-delimited JSON scene files: one `{"id", "persons", "gt"}` object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::Scene;

pub fn write_scenes_to(out: &mut impl Write, scenes: &[Scene]) -> Result<()> {
    for s in scenes {
        serde_json::to_writer(&mut *out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_scenes(path: impl AsRef<Path>, scenes: &[Scene]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_scenes_to(&mut w, scenes)?;
    w.flush()?;
    Ok(())
}

/// Parses and validates every non-blank line; `path` is only used in error messages.
pub fn read_scenes_from(input: impl BufRead, path: &Path) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |column: usize, reason: String| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            column,
            reason,
        };
        let scene: Scene =
            serde_json::from_str(&line).map_err(|e| parse_err(e.column(), e.to_string()))?;
        scene.validate(None).map_err(|e| parse_err(0, e.to_string()))?;
        scenes.push(scene);
    }
    Ok(scenes)
}

pub fn read_scenes(path: impl AsRef<Path>) -> Result<Vec<Scene>> {
    let path = path.as_ref();
    read_scenes_from(BufReader::new(File::open(path)?), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Pose;

    fn parse(text: &str) -> Result<Vec<Scene>> {
        read_scenes_from(text.as_bytes(), Path::new("mem.jsonl"))
    }

    #[test]
    fn round_trip_is_exact() {
        let awkward = [0.1 + 0.2, 1.0 / 3.0, -7.123456789012345e-7, 12345.678901234567];
        let p = Pose(vec![[awkward[0], awkward[1], awkward[2]], [awkward[3], 0.0, -1.5]]);
        let scenes = vec![
            Scene::new("a", vec![p.clone(), p.clone()], Some(vec![p.clone(), p.clone()])),
            Scene::new("b", vec![p], None),
        ];
        let mut buf = Vec::new();
        write_scenes_to(&mut buf, &scenes).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, scenes);
    }

    #[test]
    fn format_has_expected_keys() {
        let s = Scene::new("x", vec![Pose(vec![[1.0, 2.0, 3.0], [0.5, 0.0, 1.0]])], None);
        let mut buf = Vec::new();
        write_scenes_to(&mut buf, &[s]).unwrap();
        assert_eq!(
            std::str::from_utf8(&buf).unwrap(),
            "{\"id\":\"x\",\"persons\":[[[1.0,2.0,3.0],[0.5,0.0,1.0]]]}\n"
        );
    }

    #[test]
    fn wrong_joint_count_names_scene_and_line() {
        let text = concat!(
            "{\"id\":\"ok\",\"persons\":[[[0,0,0],[1,1,1]]]}\n",
            "{\"id\":\"bad\",\"persons\":[[[0,0,0],[1,1,1]],[[0,0,0]]]}\n"
        );
        match parse(text) {
            Err(Error::Parse { line, reason, .. }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("`bad`"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_persons_is_rejected() {
        let err = parse("{\"id\":\"e\",\"persons\":[]}").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse("\n{\"id\":\"e\",\"persons\":[[[0,0,]]]}") {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert!(column > 20);
            }
            other => panic!("{other:?}"),
        }
    }
}
