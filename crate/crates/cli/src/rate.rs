use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use ivqa_core::evaluation::{aggregate_ratings, parse_ratings, Rating, MAX_RATING};
use serde::Deserialize;

use crate::failure::{io_failure, Failure};
use crate::manifest::{manifest_for, Recorder};
use crate::RateArgs;

/// The fields of a generation record the annotator sees.
#[derive(Debug, Deserialize)]
pub struct Item {
    pub pair_id: String,
    pub model_id: String,
    pub answer: String,
    pub question: String,
    #[serde(default)]
    pub scene_ascii: Option<String>,
}

pub fn parse_items(text: &str) -> Result<Vec<Item>, Failure> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Failure::Data(format!("line {}: {e}", i + 1))))
        .collect()
}

enum Reply {
    Score(u8),
    Quit,
}

fn ask<R: BufRead, W: Write>(input: &mut R, out: &mut W) -> io::Result<Reply> {
    loop {
        write!(out, "rating 0-{MAX_RATING} (q to stop): ")?;
        out.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Ok(Reply::Quit);
        }
        let line = line.trim();
        if line.eq_ignore_ascii_case("q") {
            return Ok(Reply::Quit);
        }
        match line.parse::<u8>() {
            Ok(r) if r <= MAX_RATING => return Ok(Reply::Score(r)),
            _ => writeln!(out, "please enter a whole number from 0 to {MAX_RATING}")?,
        }
    }
}

/// Runs the prompt loop over `items`, skipping those already in `done`.
/// Returns the new ratings in the order given.
pub fn session<R: BufRead, W: Write>(
    items: &[Item],
    done: &HashSet<(String, String)>,
    rater: Option<&str>,
    input: &mut R,
    out: &mut W,
) -> io::Result<Vec<Rating>> {
    let todo: Vec<&Item> = items
        .iter()
        .filter(|it| !done.contains(&(it.pair_id.clone(), it.model_id.clone())))
        .collect();
    let mut ratings = Vec::new();
    for (k, item) in todo.iter().enumerate() {
        writeln!(out, "\n[{}/{}]", k + 1, todo.len())?;
        if let Some(scene) = &item.scene_ascii {
            write!(out, "{scene}")?;
        }
        writeln!(out, "answer:   {}", item.answer)?;
        writeln!(out, "question: {}", item.question)?;
        match ask(input, out)? {
            Reply::Score(rating) => ratings.push(Rating {
                pair_id: item.pair_id.clone(),
                model_id: item.model_id.clone(),
                rating,
                rater: rater.map(str::to_string),
            }),
            Reply::Quit => break,
        }
    }
    Ok(ratings)
}

fn default_out(input: &Path) -> PathBuf {
    input.with_file_name("ratings.jsonl")
}

pub fn run(args: RateArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("rate", &args);
    rec.inputs.push(args.input.clone());
    let text = fs::read_to_string(&args.input).map_err(|e| io_failure(&args.input, e))?;
    let items = parse_items(&text)?;
    let out_path = args.out.clone().unwrap_or_else(|| default_out(&args.input));
    let mut existing = match fs::read_to_string(&out_path) {
        Ok(t) => parse_ratings(&t)?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io_failure(&out_path, e)),
    };
    let done: HashSet<(String, String)> = existing
        .iter()
        .filter(|r| r.rater.as_deref() == args.rater.as_deref())
        .map(|r| (r.pair_id.clone(), r.model_id.clone()))
        .collect();
    let stdin = io::stdin();
    let stdout = io::stdout();
    let new = session(&items, &done, args.rater.as_deref(), &mut stdin.lock(), &mut stdout.lock())
        .map_err(|e| Failure::Data(format!("terminal: {e}")))?;
    if !new.is_empty() {
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&out_path)
            .map_err(|e| io_failure(&out_path, e))?;
        for r in &new {
            let line = serde_json::to_string(r).expect("rating serializes");
            writeln!(file, "{line}").map_err(|e| io_failure(&out_path, e))?;
        }
    }
    println!("\n{} new ratings written to {}", new.len(), out_path.display());
    existing.extend(new);
    for (model, stats) in aggregate_ratings(&existing) {
        println!("{model}: mean {:.2} over {} ratings", stats.mean, stats.count);
    }
    if out_path.exists() {
        rec.outputs.push(out_path.clone());
        rec.finish(&manifest_for(&out_path, false))?;
    }
    Ok(())
}
