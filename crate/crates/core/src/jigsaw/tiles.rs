use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::permset::is_bijection;

/// An image cut into `grid_n × grid_n` equally sized tiles, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    tiles: Vec<Tensor>,
    grid_n: usize,
    source_shape: [usize; 3],
}

impl TileGrid {
    pub fn from_tiles(tiles: Vec<Tensor>, grid_n: usize) -> Result<Self> {
        if grid_n == 0 || tiles.len() != grid_n * grid_n {
            return Err(Error::shape(format!(
                "expected {} tiles for a {grid_n}x{grid_n} grid, got {}",
                grid_n * grid_n,
                tiles.len()
            )));
        }
        let (c, th, tw) = tiles[0].dims3("tile")?;
        if let Some(bad) = tiles.iter().position(|t| t.shape() != [c, th, tw]) {
            return Err(Error::shape(format!(
                "tile {bad} has shape {:?}, expected {:?}",
                tiles[bad].shape(),
                [c, th, tw]
            )));
        }
        Ok(TileGrid {
            tiles,
            grid_n,
            source_shape: [c, th * grid_n, tw * grid_n],
        })
    }

    pub fn tiles(&self) -> &[Tensor] {
        &self.tiles
    }

    pub fn into_tiles(self) -> Vec<Tensor> {
        self.tiles
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn source_shape(&self) -> [usize; 3] {
        self.source_shape
    }

    pub fn tile_shape(&self) -> [usize; 3] {
        let [c, h, w] = self.source_shape;
        [c, h / self.grid_n, w / self.grid_n]
    }

    /// Replaces tile `index`; the replacement must keep the tile shape.
    pub fn set_tile(&mut self, index: usize, tile: Tensor) -> Result<()> {
        if tile.shape() != self.tile_shape() {
            return Err(Error::shape(format!(
                "replacement tile has shape {:?}, expected {:?}",
                tile.shape(),
                self.tile_shape()
            )));
        }
        self.tiles[index] = tile;
        Ok(())
    }
}

pub fn decompose(image: &Tensor, grid_n: usize) -> Result<TileGrid> {
    let (c, h, w) = image.dims3("decompose")?;
    if grid_n == 0 || h % grid_n != 0 || w % grid_n != 0 {
        return Err(Error::shape(format!(
            "image {h}x{w} is not divisible into a {grid_n}x{grid_n} grid"
        )));
    }
    let (th, tw) = (h / grid_n, w / grid_n);
    let src = image.data();
    let mut tiles = Vec::with_capacity(grid_n * grid_n);
    for gy in 0..grid_n {
        for gx in 0..grid_n {
            let mut data = Vec::with_capacity(c * th * tw);
            for ch in 0..c {
                for y in 0..th {
                    let row = (ch * h + gy * th + y) * w + gx * tw;
                    data.extend_from_slice(&src[row..row + tw]);
                }
            }
            tiles.push(Tensor::new(vec![c, th, tw], data)?);
        }
    }
    Ok(TileGrid {
        tiles,
        grid_n,
        source_shape: [c, h, w],
    })
}

/// Output tile `i` is input tile `perm[i]`.
pub fn shuffle_tiles(grid: &TileGrid, perm: &[usize]) -> Result<TileGrid> {
    if perm.len() != grid.len() || !is_bijection(perm) {
        return Err(Error::invalid(format!(
            "{perm:?} is not a permutation of {} tiles",
            grid.len()
        )));
    }
    Ok(TileGrid {
        tiles: perm.iter().map(|&p| grid.tiles[p].clone()).collect(),
        grid_n: grid.grid_n,
        source_shape: grid.source_shape,
    })
}

pub fn recompose(grid: &TileGrid) -> Result<Tensor> {
    let [c, h, w] = grid.source_shape;
    let n = grid.grid_n;
    let (th, tw) = (h / n, w / n);
    let mut data = vec![0.0; c * h * w];
    for (k, tile) in grid.tiles.iter().enumerate() {
        if tile.shape() != [c, th, tw] {
            return Err(Error::shape(format!(
                "tile {k} has shape {:?}, expected {:?}",
                tile.shape(),
                [c, th, tw]
            )));
        }
        let (gy, gx) = (k / n, k % n);
        for ch in 0..c {
            for y in 0..th {
                let dst = (ch * h + gy * th + y) * w + gx * tw;
                let src = (ch * th + y) * tw;
                data[dst..dst + tw].copy_from_slice(&tile.data()[src..src + tw]);
            }
        }
    }
    Tensor::new(vec![c, h, w], data)
}

/// `recompose(shuffle_tiles(decompose(image), perm))`.
pub fn shuffle_image(image: &Tensor, grid_n: usize, perm: &[usize]) -> Result<Tensor> {
    recompose(&shuffle_tiles(&decompose(image, grid_n)?, perm)?)
}
