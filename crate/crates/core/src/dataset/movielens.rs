//! Readers for the `::`-delimited MovieLens-1M files.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// One row of `ratings.dat`: `UserID::MovieID::Rating::Timestamp`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawInteraction {
    pub user_id: String,
    pub item_id: String,
    pub rating: u8,
    pub timestamp: u64,
}

/// One row of `users.dat`: `UserID::Gender::Age::Occupation::Zip-code`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserProfile {
    pub gender: String,
    pub age: String,
    pub occupation: String,
    pub zip: String,
}

/// One row of `movies.dat`: `MovieID::Title::Genre1|Genre2|...`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Movie {
    pub title: String,
    pub genres: Vec<String>,
}

impl Movie {
    /// The first listed genre, used as the item's category field.
    pub fn category(&self) -> &str {
        self.genres.first().map_or("unknown", String::as_str)
    }
}

/// Side information for users and movies. Either map may be empty.
#[derive(Clone, Debug, Default)]
pub struct Catalog {
    pub users: HashMap<String, UserProfile>,
    pub movies: HashMap<String, Movie>,
}

impl Catalog {
    /// Loads `users.dat` and `movies.dat` from `dir` when present.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut catalog = Catalog::default();
        let users = dir.join("users.dat");
        if users.exists() {
            catalog.users = parse_users(&read_text(&users)?)?;
        }
        let movies = dir.join("movies.dat");
        if movies.exists() {
            catalog.movies = parse_movies(&read_text(&movies)?)?;
        }
        Ok(catalog)
    }

    pub fn category(&self, item_id: &str) -> &str {
        self.movies.get(item_id).map_or("unknown", Movie::category)
    }

    pub fn title(&self, item_id: &str) -> String {
        self.movies
            .get(item_id)
            .map_or_else(|| format!("movie {item_id}"), |m| m.title.clone())
    }
}

/// The MovieLens files are Latin-1; fall back to a byte-wise decode when
/// the content is not valid UTF-8.
pub(crate) fn read_text(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().iter().map(|&b| b as char).collect(),
    })
}

fn split_line<'a>(line: &'a str, lineno: usize, expected: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split("::").collect();
    if parts.len() != expected {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected {expected} '::'-separated fields, found {}", parts.len()),
        });
    }
    Ok(parts)
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_interactions_str(text: &str) -> Result<Vec<RawInteraction>> {
    lines(text)
        .map(|(lineno, line)| {
            let p = split_line(line, lineno, 4)?;
            let num = |s: &str, what: &str| {
                s.trim().parse::<u64>().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("{what} {s:?} is not a non-negative integer"),
                })
            };
            let rating = num(p[2], "rating")?;
            if !(1..=5).contains(&rating) {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("rating {rating} outside [1, 5]"),
                });
            }
            Ok(RawInteraction {
                user_id: p[0].trim().to_string(),
                item_id: p[1].trim().to_string(),
                rating: rating as u8,
                timestamp: num(p[3], "timestamp")?,
            })
        })
        .collect()
}

/// Reads a `ratings.dat` file, one interaction per line in file order.
pub fn parse_interactions(path: impl AsRef<Path>) -> Result<Vec<RawInteraction>> {
    parse_interactions_str(&read_text(path.as_ref())?)
}

pub fn parse_users(text: &str) -> Result<HashMap<String, UserProfile>> {
    lines(text)
        .map(|(lineno, line)| {
            let p = split_line(line, lineno, 5)?;
            Ok((
                p[0].trim().to_string(),
                UserProfile {
                    gender: p[1].trim().to_string(),
                    age: p[2].trim().to_string(),
                    occupation: p[3].trim().to_string(),
                    zip: p[4].trim().to_string(),
                },
            ))
        })
        .collect()
}

pub fn parse_movies(text: &str) -> Result<HashMap<String, Movie>> {
    lines(text)
        .map(|(lineno, line)| {
            let p = split_line(line, lineno, 3)?;
            Ok((
                p[0].trim().to_string(),
                Movie {
                    title: p[1].trim().to_string(),
                    genres: p[2].split('|').map(|g| g.trim().to_string()).collect(),
                },
            ))
        })
        .collect()
}

/// Age bucket codes used by `users.dat`.
pub fn age_label(code: &str) -> &'static str {
    match code {
        "1" => "under 18",
        "18" => "18-24",
        "25" => "25-34",
        "35" => "35-44",
        "45" => "45-49",
        "50" => "50-55",
        "56" => "56+",
        _ => "unknown age",
    }
}

/// Occupation codes used by `users.dat`.
pub fn occupation_label(code: &str) -> &'static str {
    const NAMES: [&str; 21] = [
        "other",
        "academic/educator",
        "artist",
        "clerical/admin",
        "college/grad student",
        "customer service",
        "doctor/health care",
        "executive/managerial",
        "farmer",
        "homemaker",
        "K-12 student",
        "lawyer",
        "programmer",
        "retired",
        "sales/marketing",
        "scientist",
        "self-employed",
        "technician/engineer",
        "tradesman/craftsman",
        "unemployed",
        "writer",
    ];
    code.parse::<usize>()
        .ok()
        .and_then(|i| NAMES.get(i).copied())
        .unwrap_or("unknown occupation")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_rating_line() {
        let rows = parse_interactions_str("1::1193::5::978300760\n").unwrap();
        assert_eq!(
            rows,
            vec![RawInteraction {
                user_id: "1".into(),
                item_id: "1193".into(),
                rating: 5,
                timestamp: 978300760,
            }]
        );
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_interactions_str("").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = parse_interactions_str("1::2::3::4\n1::x::5::0\n1::x::y::0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_interactions_str("1::2::9::4"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_interactions_str("1::2::3"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            parse_interactions("/nonexistent/ratings.dat"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn parses_side_files() {
        let users = parse_users("1::F::1::10::48067\n").unwrap();
        assert_eq!(users["1"].occupation, "10");
        assert_eq!(occupation_label("10"), "K-12 student");
        assert_eq!(age_label("1"), "under 18");
        let movies = parse_movies("1::Toy Story (1995)::Animation|Children's|Comedy\n").unwrap();
        assert_eq!(movies["1"].category(), "Animation");
        assert_eq!(movies["1"].genres.len(), 3);
    }
}
