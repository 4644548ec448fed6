//! Path patterns for FileFinder.
//!
//! `*` matches any run of characters inside one path segment, a segment that
//! is exactly `**` matches zero or more whole segments, and every other
//! character is literal.

use super::FlowError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathGlob {
    segments: Vec<String>,
}

impl PathGlob {
    /// Parse a pattern rooted at the sandbox. `..` anywhere is a path escape.
    pub fn parse(pattern: &str) -> Result<Self, FlowError> {
        if pattern.trim().is_empty() {
            return Err(FlowError::InvalidFlow("empty glob".into()));
        }
        let mut segments = Vec::new();
        for seg in pattern.split(['/', '\\']) {
            match seg {
                "" | "." => {}
                ".." => return Err(FlowError::PathEscape(pattern.to_owned())),
                s => segments.push(s.to_owned()),
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    /// Leading segments with no wildcard: the directory to start walking from.
    pub fn literal_prefix(&self) -> &[String] {
        let n = self.segments.iter().take_while(|s| !s.contains('*')).count();
        &self.segments[..n]
    }

    pub fn matches<S: AsRef<str>>(&self, path: &[S]) -> bool {
        let pat: Vec<&str> = self.segments.iter().map(String::as_str).collect();
        let path: Vec<&str> = path.iter().map(AsRef::as_ref).collect();
        match_segments(&pat, &path)
    }

    /// Match a `/`-separated path such as `/var/lib/mysql/fluxbb/posts.ibd`.
    pub fn matches_path(&self, path: &str) -> bool {
        let segs: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
        self.matches(&segs)
    }
}

fn match_segments(pat: &[&str], path: &[&str]) -> bool {
    match pat.split_first() {
        None => path.is_empty(),
        Some((&"**", rest)) => (0..=path.len()).any(|k| match_segments(rest, &path[k..])),
        Some((p, rest)) => match path.split_first() {
            Some((s, tail)) => match_segment(p, s) && match_segments(rest, tail),
            None => false,
        },
    }
}

/// Single-segment match where `*` is the only wildcard.
fn match_segment(pat: &str, s: &str) -> bool {
    let parts: Vec<&str> = pat.split('*').collect();
    if parts.len() == 1 {
        return pat == s;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !s.starts_with(first) || s.len() < first.len() + last.len() || !s.ends_with(last) {
        return false;
    }
    let mut rest = &s[first.len()..s.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(i) => rest = &rest[i + mid.len()..],
            None => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn double_star_crosses_segments() {
        let g = PathGlob::parse("/var/lib/mysql/fluxbb/**").unwrap();
        assert!(g.matches_path("/var/lib/mysql/fluxbb/posts.ibd"));
        assert!(g.matches_path("/var/lib/mysql/fluxbb/sub/dir/x"));
        assert!(!g.matches_path("/var/lib/mysql/other/posts.ibd"));
        assert_eq!(g.literal_prefix(), ["var", "lib", "mysql", "fluxbb"]);
    }

    #[test]
    fn single_star_stays_in_segment() {
        let g = PathGlob::parse("/var/log/*.log").unwrap();
        assert!(g.matches_path("/var/log/auth.log"));
        assert!(!g.matches_path("/var/log/nginx/access.log"));
        assert!(!g.matches_path("/var/log/auth.log.1"));
        let g = PathGlob::parse("/home/*/.bash_history").unwrap();
        assert!(g.matches_path("/home/alice/.bash_history"));
    }

    #[test]
    fn other_characters_are_literal() {
        let g = PathGlob::parse("/etc/host?").unwrap();
        assert!(g.matches_path("/etc/host?"));
        assert!(!g.matches_path("/etc/hosts"));
        let g = PathGlob::parse("/a/[x]").unwrap();
        assert!(g.matches_path("/a/[x]"));
        assert!(!g.matches_path("/a/x"));
    }

    #[test]
    fn dot_dot_escapes() {
        assert!(matches!(PathGlob::parse("../../etc/passwd"), Err(FlowError::PathEscape(_))));
        assert!(matches!(PathGlob::parse("/var/../../etc"), Err(FlowError::PathEscape(_))));
        assert!(matches!(PathGlob::parse("  "), Err(FlowError::InvalidFlow(_))));
    }

    #[test]
    fn segment_wildcards() {
        assert!(match_segment("a*b*c", "aXXbYYc"));
        assert!(match_segment("*", ""));
        assert!(!match_segment("a*a", "a"));
        assert!(match_segment("a*a", "aa"));
    }

    proptest! {
        #[test]
        fn literal_patterns_match_only_themselves(segs in prop::collection::vec("[a-z]{1,5}", 1..5), other in "[a-z]{1,5}") {
            let path = format!("/{}", segs.join("/"));
            let g = PathGlob::parse(&path).unwrap();
            prop_assert!(g.matches_path(&path));
            let mut alt = segs.clone();
            let last = alt.len() - 1;
            prop_assume!(alt[last] != other);
            alt[last] = other;
            let alt_path = format!("/{}", alt.join("/"));
            prop_assert!(!g.matches_path(&alt_path));
        }

        #[test]
        fn double_star_matches_every_descendant(prefix in prop::collection::vec("[a-z]{1,4}", 0..3), tail in prop::collection::vec("[a-z]{1,4}", 1..4)) {
            let g = PathGlob::parse(&format!("/{}/**", prefix.join("/"))).unwrap();
            let mut all = prefix.clone();
            all.extend(tail);
            prop_assert!(g.matches(&all));
        }
    }
}
