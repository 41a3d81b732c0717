use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Size {
    Small,
    Big,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Shape::Circle => "circles",
            Shape::Square => "squares",
            Shape::Triangle => "triangles",
        }
    }

    pub fn parse(word: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.word() == word || s.plural() == word)
    }
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }

    pub fn parse(word: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.word() == word)
    }
}

impl Size {
    pub const ALL: [Size; 2] = [Size::Small, Size::Big];

    pub fn word(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Big => "big",
        }
    }

    pub fn parse(word: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.word() == word)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
}

impl fmt::Display for Object {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.size.word(), self.color.word(), self.shape.word())
    }
}

/// Number of feature channels used by the cell encoding:
/// shape one-hot (3), color one-hot (4), size bit, occupancy bit.
pub const CODE_LEN: usize = 9;
const SHAPE_OFFSET: usize = 0;
const COLOR_OFFSET: usize = 3;
const SIZE_CHANNEL: usize = 7;
const OCCUPANCY_CHANNEL: usize = 8;

/// A grid of cells, each empty or holding one object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    height: usize,
    width: usize,
    cells: Vec<Option<Object>>,
}

impl Scene {
    pub fn new(height: usize, width: usize, cells: Vec<Option<Object>>) -> Result<Self> {
        if height == 0 || width == 0 || cells.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "scene: {} cells for a {height}x{width} grid",
                cells.len()
            )));
        }
        if cells.iter().all(Option::is_none) {
            return Err(Error::InvalidArgument("scene must contain at least one object".into()));
        }
        Ok(Self { height, width, cells })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[Option<Object>] {
        &self.cells
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<Object> {
        self.cells[row * self.width + col]
    }

    pub fn objects(&self) -> impl Iterator<Item = Object> + '_ {
        self.cells.iter().flatten().copied()
    }

    pub fn count_where(&self, pred: impl Fn(&Object) -> bool) -> usize {
        self.objects().filter(|o| pred(o)).count()
    }
}

/// Encodes a scene as an `N×H×W` feature grid.
///
/// Each cell's `N`-vector is the one-hot shape, one-hot color, size bit and
/// occupancy bit, zero-padded to `N`. Empty cells are all zero.
pub fn render_features(scene: &Scene, feature_len: usize) -> Result<Tensor> {
    if feature_len < CODE_LEN {
        return Err(Error::InvalidArgument(format!(
            "feature length {feature_len} is smaller than the cell code length {CODE_LEN}"
        )));
    }
    let plane = scene.height * scene.width;
    let mut data = vec![0.0; feature_len * plane];
    for (cell, obj) in scene.cells.iter().enumerate() {
        let Some(obj) = obj else { continue };
        let shape = Shape::ALL.iter().position(|&s| s == obj.shape).unwrap_or(0);
        let color = Color::ALL.iter().position(|&c| c == obj.color).unwrap_or(0);
        data[(SHAPE_OFFSET + shape) * plane + cell] = 1.0;
        data[(COLOR_OFFSET + color) * plane + cell] = 1.0;
        if obj.size == Size::Big {
            data[SIZE_CHANNEL * plane + cell] = 1.0;
        }
        data[OCCUPANCY_CHANNEL * plane + cell] = 1.0;
    }
    Tensor::new(&[feature_len, scene.height, scene.width], data)
}

/// Inverse of [`render_features`].
pub fn decode_features(features: &Tensor) -> Result<Scene> {
    let (n, h, w) = match features.shape() {
        [n, h, w] => (*n, *h, *w),
        other => {
            return Err(Error::InvalidShape {
                op: "decode_features",
                shape: other.to_vec(),
                reason: "expected N×H×W".into(),
            })
        }
    };
    if n < CODE_LEN {
        return Err(Error::InvalidArgument("feature length below code length".into()));
    }
    let plane = h * w;
    let d = features.data();
    let on = |channel: usize, cell: usize| d[channel * plane + cell] > 0.5;
    let mut cells = Vec::with_capacity(plane);
    for cell in 0..plane {
        if !on(OCCUPANCY_CHANNEL, cell) {
            cells.push(None);
            continue;
        }
        let shape = (0..3)
            .find(|&i| on(SHAPE_OFFSET + i, cell))
            .map(|i| Shape::ALL[i])
            .ok_or_else(|| Error::InvalidArgument(format!("cell {cell}: no shape channel set")))?;
        let color = (0..4)
            .find(|&i| on(COLOR_OFFSET + i, cell))
            .map(|i| Color::ALL[i])
            .ok_or_else(|| Error::InvalidArgument(format!("cell {cell}: no color channel set")))?;
        let size = if on(SIZE_CHANNEL, cell) { Size::Big } else { Size::Small };
        cells.push(Some(Object { shape, color, size }));
    }
    Scene::new(h, w, cells)
}
