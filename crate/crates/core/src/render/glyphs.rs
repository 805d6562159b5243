use std::collections::HashMap;
use std::path::Path;

use crate::design::{FontId, MAX_FONT_ID};
use crate::error::{Error, Result};

pub const CELL: usize = 10;
pub const FIRST_CHAR: u8 = 32;
pub const CHAR_COUNT: usize = 95;
const MAGIC: &[u8; 4] = b"PFGL";
const VERSION: u8 = 1;
const GLYPH_BYTES: usize = (CELL * CELL).div_ceil(8);

pub const STYLE_NAMES: [&str; 4] = ["regular", "bold", "italic", "outline"];

/// Coverage bitmap of one glyph, `CELL x CELL`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    bits: Vec<bool>,
}

impl Glyph {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.len() != CELL * CELL {
            return Err(Error::InvalidArgument(format!("glyph needs {} bits", CELL * CELL)));
        }
        Ok(Self { bits })
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * CELL + col]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn ink(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Printable ASCII plus a fallback box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphSet {
    glyphs: Vec<Glyph>,
}

impl GlyphSet {
    pub fn new(glyphs: Vec<Glyph>) -> Result<Self> {
        if glyphs.len() != CHAR_COUNT + 1 {
            return Err(Error::InvalidArgument(format!("glyph set needs {} glyphs", CHAR_COUNT + 1)));
        }
        Ok(Self { glyphs })
    }

    /// Glyph for `c`, or `None` when it is not covered.
    pub fn get(&self, c: char) -> Option<&Glyph> {
        let code = c as u32;
        let first = FIRST_CHAR as u32;
        (first..first + CHAR_COUNT as u32).contains(&code).then(|| &self.glyphs[(code - first) as usize])
    }

    pub fn fallback(&self) -> &Glyph {
        &self.glyphs[CHAR_COUNT]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + self.glyphs.len() * GLYPH_BYTES);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[VERSION, CELL as u8, CELL as u8, FIRST_CHAR, CHAR_COUNT as u8]);
        for g in &self.glyphs {
            let mut packed = [0u8; GLYPH_BYTES];
            for (i, &b) in g.bits.iter().enumerate() {
                if b {
                    packed[i / 8] |= 0x80 >> (i % 8);
                }
            }
            out.extend_from_slice(&packed);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let decode = |offset: usize, msg: &str| Error::Decode { offset, msg: msg.to_string() };
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(decode(0, "bad glyph file magic"));
        }
        if bytes[4] != VERSION {
            return Err(decode(4, "unsupported glyph file version"));
        }
        if bytes[5] as usize != CELL
            || bytes[6] as usize != CELL
            || bytes[7] != FIRST_CHAR
            || bytes[8] as usize != CHAR_COUNT
        {
            return Err(decode(5, "unexpected glyph geometry"));
        }
        let body = &bytes[9..];
        if body.len() != (CHAR_COUNT + 1) * GLYPH_BYTES {
            return Err(decode(9 + body.len().min((CHAR_COUNT + 1) * GLYPH_BYTES), "glyph data length mismatch"));
        }
        let glyphs = body
            .chunks(GLYPH_BYTES)
            .map(|c| Glyph { bits: (0..CELL * CELL).map(|i| c[i / 8] & (0x80 >> (i % 8)) != 0).collect() })
            .collect();
        Self::new(glyphs)
    }
}

/// Maps every font id to one bundled glyph style.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphProvider {
    styles: Vec<GlyphSet>,
    font_map: HashMap<u8, usize>,
}

const BUNDLED: [&[u8]; 4] = [
    include_bytes!("../../assets/glyphs/regular.pfgl"),
    include_bytes!("../../assets/glyphs/bold.pfgl"),
    include_bytes!("../../assets/glyphs/italic.pfgl"),
    include_bytes!("../../assets/glyphs/outline.pfgl"),
];
const BUNDLED_MAP: &str = include_str!("../../assets/font_map.csv");

/// Parses a `font_id,style` table; every id in `1..=62` must appear once.
pub fn parse_font_map(text: &str, style_count: usize) -> Result<HashMap<u8, usize>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut map = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || Error::Validation(format!("font map row {:?}", rec));
        let id: u8 = rec.get(0).and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?;
        let name = rec.get(1).map(str::trim).ok_or_else(bad)?;
        FontId::new(id)?;
        let style = STYLE_NAMES
            .iter()
            .position(|s| *s == name)
            .filter(|&s| s < style_count)
            .ok_or_else(|| Error::Validation(format!("unknown glyph style {name:?}")))?;
        if map.insert(id, style).is_some() {
            return Err(Error::Validation(format!("font id {id} mapped twice")));
        }
    }
    if map.len() != MAX_FONT_ID as usize {
        return Err(Error::Validation(format!("font map covers {} of {MAX_FONT_ID} ids", map.len())));
    }
    Ok(map)
}

impl GlyphProvider {
    pub fn new(styles: Vec<GlyphSet>, font_map: HashMap<u8, usize>) -> Result<Self> {
        if styles.is_empty() || font_map.values().any(|&s| s >= styles.len()) {
            return Err(Error::Validation("font map references a missing style".into()));
        }
        Ok(Self { styles, font_map })
    }

    pub fn bundled() -> Self {
        let styles = BUNDLED.iter().map(|b| GlyphSet::from_bytes(b).expect("bundled glyphs")).collect();
        let map = parse_font_map(BUNDLED_MAP, STYLE_NAMES.len()).expect("bundled font map");
        Self::new(styles, map).expect("bundled assets are consistent")
    }

    /// Loads `glyphs/<style>.pfgl` and `font_map.csv` from an asset root.
    pub fn load_dir(root: &Path) -> Result<Self> {
        let styles = STYLE_NAMES
            .iter()
            .map(|n| GlyphSet::from_bytes(&std::fs::read(root.join("glyphs").join(format!("{n}.pfgl")))?))
            .collect::<Result<Vec<_>>>()?;
        let map = parse_font_map(&std::fs::read_to_string(root.join("font_map.csv"))?, styles.len())?;
        Self::new(styles, map)
    }

    pub fn style_count(&self) -> usize {
        self.styles.len()
    }

    pub fn style_index(&self, font: FontId) -> usize {
        self.font_map[&font.get()]
    }

    pub fn style(&self, index: usize) -> &GlyphSet {
        &self.styles[index]
    }

    pub fn set_for(&self, font: FontId) -> &GlyphSet {
        &self.styles[self.style_index(font)]
    }

    /// First font id drawn with the given style.
    pub fn font_for_style(&self, style: usize) -> Option<FontId> {
        (1..=MAX_FONT_ID).find(|id| self.font_map.get(id) == Some(&style)).map(|id| FontId::new(id).expect("in range"))
    }
}
