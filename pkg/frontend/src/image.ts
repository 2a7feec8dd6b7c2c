/** PNG loading and simple resampling helpers (no tf dependency). */

import * as fs from 'fs'
import { PNG } from 'pngjs'

export interface RgbImage {
  width: number
  height: number
  /** row-major RGB float32 in [0, 1], length h*w*3 */
  data: Float32Array
}

export function loadPng(path: string): RgbImage {
  const png = PNG.sync.read(fs.readFileSync(path))
  const { width, height } = png
  const out = new Float32Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    out[3 * i] = png.data[4 * i] / 255
    out[3 * i + 1] = png.data[4 * i + 1] / 255
    out[3 * i + 2] = png.data[4 * i + 2] / 255
  }
  return { width, height, data: out }
}

export function savePng(path: string, img: RgbImage): void {
  const png = new PNG({ width: img.width, height: img.height })
  for (let i = 0; i < img.width * img.height; i++) {
    for (let c = 0; c < 3; c++) {
      png.data[4 * i + c] = Math.max(0, Math.min(255, Math.round(img.data[3 * i + c] * 255)))
    }
    png.data[4 * i + 3] = 255
  }
  fs.writeFileSync(path, PNG.sync.write(png))
}

/** 2x area downsampling; odd trailing rows/cols average what remains. */
export function downsample2(img: RgbImage): RgbImage {
  const h2 = Math.ceil(img.height / 2)
  const w2 = Math.ceil(img.width / 2)
  const out = new Float32Array(h2 * w2 * 3)
  for (let y = 0; y < h2; y++) {
    for (let x = 0; x < w2; x++) {
      for (let c = 0; c < 3; c++) {
        let sum = 0
        let count = 0
        for (let dy = 0; dy < 2; dy++) {
          for (let dx = 0; dx < 2; dx++) {
            const yy = 2 * y + dy
            const xx = 2 * x + dx
            if (yy < img.height && xx < img.width) {
              sum += img.data[3 * (yy * img.width + xx) + c]
              count++
            }
          }
        }
        out[3 * (y * w2 + x) + c] = sum / count
      }
    }
  }
  return { width: w2, height: h2, data: out }
}

/** Replicate-pad an image on the bottom/right to the given size. */
export function padToSize(img: RgbImage, height: number, width: number): RgbImage {
  if (height === img.height && width === img.width) return img
  const out = new Float32Array(height * width * 3)
  for (let y = 0; y < height; y++) {
    const sy = Math.min(y, img.height - 1)
    for (let x = 0; x < width; x++) {
      const sx = Math.min(x, img.width - 1)
      for (let c = 0; c < 3; c++) {
        out[3 * (y * width + x) + c] = img.data[3 * (sy * img.width + sx) + c]
      }
    }
  }
  return { width, height, data: out }
}
