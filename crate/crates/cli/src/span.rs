//! Line numbers of JSON values, keyed by JSON pointer (`/noise/R/2`), so that
//! validation errors can point into the scenario file.
//!
//! The scanner assumes the text already parsed as JSON.

use std::collections::HashMap;

#[derive(Clone, Debug, Default)]
pub struct LineIndex {
    lines: HashMap<String, usize>,
}

impl LineIndex {
    pub fn build(text: &str) -> Self {
        let mut s = Scanner {
            b: text.as_bytes(),
            pos: 0,
            line: 1,
            out: HashMap::new(),
        };
        s.value(String::new());
        LineIndex { lines: s.out }
    }

    /// Line of `pointer`, or of its nearest recorded ancestor.
    pub fn line(&self, pointer: &str) -> Option<usize> {
        let mut p = pointer;
        loop {
            if let Some(&l) = self.lines.get(p) {
                return Some(l);
            }
            p = &p[..p.rfind('/')?];
        }
    }
}

struct Scanner<'a> {
    b: &'a [u8],
    pos: usize,
    line: usize,
    out: HashMap<String, usize>,
}

impl Scanner<'_> {
    fn peek(&self) -> Option<u8> {
        self.b.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.bump();
        }
    }

    fn value(&mut self, path: String) {
        self.ws();
        self.out.insert(path.clone(), self.line);
        match self.peek() {
            Some(b'{') => {
                self.bump();
                loop {
                    self.ws();
                    match self.peek() {
                        None => break,
                        Some(b'}') => {
                            self.bump();
                            break;
                        }
                        Some(b'"') => {
                            let key = self.string();
                            self.ws();
                            if self.peek() == Some(b':') {
                                self.bump();
                            }
                            self.value(format!("{path}/{key}"));
                        }
                        Some(_) => {
                            self.bump();
                        }
                    }
                }
            }
            Some(b'[') => {
                self.bump();
                let mut i = 0;
                loop {
                    self.ws();
                    match self.peek() {
                        None => break,
                        Some(b']') => {
                            self.bump();
                            break;
                        }
                        Some(b',') => {
                            self.bump();
                            i += 1;
                        }
                        Some(_) => self.value(format!("{path}/{i}")),
                    }
                }
            }
            Some(b'"') => {
                self.string();
            }
            _ => {
                while matches!(self.peek(), Some(c) if !matches!(c, b',' | b'}' | b']') && !c.is_ascii_whitespace()) {
                    self.bump();
                }
            }
        }
    }

    fn string(&mut self) -> String {
        self.bump();
        let start = self.pos;
        let mut end = start;
        while let Some(c) = self.bump() {
            match c {
                b'\\' => {
                    self.bump();
                }
                b'"' => break,
                _ => {}
            }
            end = self.pos;
        }
        String::from_utf8_lossy(&self.b[start..end]).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointers_map_to_lines() {
        let text = "{\n  \"a\": 1,\n  \"b\": [\n    [1, 2],\n    [3,\n     4]\n  ],\n  \"c\": {\"d\": \"x\\\"y\"}\n}";
        let idx = LineIndex::build(text);
        assert_eq!(idx.line(""), Some(1));
        assert_eq!(idx.line("/a"), Some(2));
        assert_eq!(idx.line("/b"), Some(3));
        assert_eq!(idx.line("/b/0"), Some(4));
        assert_eq!(idx.line("/b/1"), Some(5));
        assert_eq!(idx.line("/b/1/1"), Some(6));
        assert_eq!(idx.line("/c/d"), Some(8));
        assert_eq!(idx.line("/c/zz"), Some(8));
    }
}
