/**
 * VGG16 convolutional feature extractor on the tfjs CPU backend.
 *
 * Stage taps: the final activation of block 3 (stride 4, 256ch), block 4
 * (stride 8, 512ch) and block 5 before its pooling (stride 16, 512ch).
 * "mid" maps average-pool the block-3 tap down to stride 8 and concatenate
 * block 4 (768 channels); "deep" maps are the block-5 tap.
 */

import * as tf from '@tensorflow/tfjs'
import * as fs from 'fs'
import * as path from 'path'
import { RgbImage, padToSize } from './image'

export interface ConvSpec {
  name: string
  filters: number
  /** pool after this layer */
  pool: boolean
}

export const VGG16_LAYERS: ConvSpec[] = [
  { name: 'block1_conv1', filters: 64, pool: false },
  { name: 'block1_conv2', filters: 64, pool: true },
  { name: 'block2_conv1', filters: 128, pool: false },
  { name: 'block2_conv2', filters: 128, pool: true },
  { name: 'block3_conv1', filters: 256, pool: false },
  { name: 'block3_conv2', filters: 256, pool: false },
  { name: 'block3_conv3', filters: 256, pool: true },
  { name: 'block4_conv1', filters: 512, pool: false },
  { name: 'block4_conv2', filters: 512, pool: false },
  { name: 'block4_conv3', filters: 512, pool: true },
  { name: 'block5_conv1', filters: 512, pool: false },
  { name: 'block5_conv2', filters: 512, pool: false },
  { name: 'block5_conv3', filters: 512, pool: false },
]

export interface LayerWeights {
  kernel: tf.Tensor4D
  bias: tf.Tensor1D
}

export type VggWeights = Map<string, LayerWeights>

/** Normalization applied to [0,1] RGB inputs before the first conv. */
const MEAN = [0.485, 0.456, 0.406]
const STD = [0.229, 0.224, 0.225]

function mulberry32(seed: number): () => number {
  let a = seed >>> 0
  return () => {
    a |= 0
    a = (a + 0x6d2b79f5) | 0
    let t = Math.imul(a ^ (a >>> 15), 1 | a)
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

/** Deterministic He-style random weights for weight-free parity testing. */
export function randomWeights(seed: number): VggWeights {
  const rand = mulberry32(seed)
  const weights: VggWeights = new Map()
  let inputChannels = 3
  for (const layer of VGG16_LAYERS) {
    const fanIn = 3 * 3 * inputChannels
    const scale = Math.sqrt(2 / fanIn)
    const size = 3 * 3 * inputChannels * layer.filters
    const k = new Float32Array(size)
    for (let i = 0; i < size; i++) {
      // Box-Muller on the seeded stream
      const u = Math.max(rand(), 1e-12)
      const v = rand()
      k[i] = scale * Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v)
    }
    weights.set(layer.name, {
      kernel: tf.tensor4d(k, [3, 3, inputChannels, layer.filters]),
      bias: tf.zeros([layer.filters]),
    })
    inputChannels = layer.filters
  }
  return weights
}

interface WeightSpec {
  name: string
  shape: number[]
  dtype: string
}

/**
 * Load weights from a tfjs layers-model directory (model.json plus binary
 * shards), matching entries by the "blockN_convM" substring of their names.
 */
export function loadWeightsFromDir(dir: string): VggWeights {
  const modelPath = path.join(dir, 'model.json')
  if (!fs.existsSync(modelPath)) {
    throw new Error(
      `no model.json under ${dir}; supply a tfjs layers-format VGG16 ` +
        `(e.g. converted with tensorflowjs_converter) or use --random-weights for testing`,
    )
  }
  const manifest = JSON.parse(fs.readFileSync(modelPath, 'utf-8'))
  const groups = manifest.weightsManifest
  if (!groups) {
    throw new Error(`${modelPath}: missing weightsManifest`)
  }
  const found: Map<string, tf.Tensor> = new Map()
  for (const group of groups) {
    const buffers = group.paths.map((p: string) => fs.readFileSync(path.join(dir, p)))
    const blob = Buffer.concat(buffers)
    let offset = 0
    for (const spec of group.weights as WeightSpec[]) {
      const n = spec.shape.reduce((a, b) => a * b, 1)
      if (spec.dtype !== 'float32') {
        offset += n * 4
        continue
      }
      const arr = new Float32Array(blob.buffer, blob.byteOffset + offset, n)
      found.set(spec.name, tf.tensor(Array.from(arr), spec.shape))
      offset += n * 4
    }
  }
  const weights: VggWeights = new Map()
  for (const layer of VGG16_LAYERS) {
    const kernelKey = Array.from(found.keys()).find(
      (k) => k.includes(layer.name) && /kernel/.test(k),
    )
    const biasKey = Array.from(found.keys()).find((k) => k.includes(layer.name) && /bias/.test(k))
    if (!kernelKey || !biasKey) {
      throw new Error(
        `weights for ${layer.name} not found in ${modelPath}; ` +
          `available: ${Array.from(found.keys()).slice(0, 8).join(', ')}...`,
      )
    }
    weights.set(layer.name, {
      kernel: found.get(kernelKey) as tf.Tensor4D,
      bias: found.get(biasKey) as tf.Tensor1D,
    })
  }
  return weights
}

export interface StageTaps {
  /** final block-3 activation, stride 4 */
  relu3: tf.Tensor3D
  /** final block-4 activation, stride 8 */
  relu4: tf.Tensor3D
  /** final block-5 activation (pre-pool), stride 16 */
  relu5: tf.Tensor3D
}

export function forwardTaps(image: RgbImage, weights: VggWeights): StageTaps {
  return tf.tidy(() => {
    let x = tf.tensor3d(image.data, [image.height, image.width, 3])
    x = tf.div(tf.sub(x, tf.tensor1d(MEAN)), tf.tensor1d(STD))
    let batch = tf.expandDims(x, 0) as tf.Tensor4D
    let relu3: tf.Tensor4D | null = null
    let relu4: tf.Tensor4D | null = null
    for (const layer of VGG16_LAYERS) {
      const w = weights.get(layer.name)
      if (!w) throw new Error(`missing weights for ${layer.name}`)
      batch = tf.relu(tf.add(tf.conv2d(batch, w.kernel, 1, 'same'), w.bias))
      if (layer.name === 'block3_conv3') relu3 = batch
      if (layer.name === 'block4_conv3') relu4 = batch
      if (layer.pool) batch = tf.maxPool(batch as tf.Tensor4D, 2, 2, 'same')
    }
    const relu5 = batch
    const squeeze = (t: tf.Tensor4D) => tf.squeeze(t, [0]) as tf.Tensor3D
    return {
      relu3: tf.keep(squeeze(relu3 as tf.Tensor4D)),
      relu4: tf.keep(squeeze(relu4 as tf.Tensor4D)),
      relu5: tf.keep(squeeze(relu5)),
    }
  })
}

export interface ExtractedMap {
  gridH: number
  gridW: number
  channels: number
  stride: number
  srcH: number
  srcW: number
  data: Float32Array
}

function cropCells(t: tf.Tensor3D, gridH: number, gridW: number): tf.Tensor3D {
  return tf.slice(t, [0, 0, 0], [gridH, gridW, t.shape[2]])
}

/**
 * Extract a "mid" (stride 8, 768ch) or "deep" (stride 16, 512ch) map.
 * Inputs whose sides do not divide the stride are replicate-padded up to
 * the next multiple of 16, and the cell grid is cropped back to
 * ceil(src/stride) so the recorded source_dims stay authoritative.
 */
export function extractMap(image: RgbImage, weights: VggWeights, mode: 'mid' | 'deep'): ExtractedMap {
  const srcH = image.height
  const srcW = image.width
  const padH = Math.ceil(srcH / 16) * 16
  const padW = Math.ceil(srcW / 16) * 16
  const padded = padToSize(image, padH, padW)
  const taps = forwardTaps(padded, weights)
  try {
    if (mode === 'deep') {
      const stride = 16
      const gridH = Math.ceil(srcH / stride)
      const gridW = Math.ceil(srcW / stride)
      const cropped = cropCells(taps.relu5, gridH, gridW)
      const data = cropped.dataSync() as Float32Array
      cropped.dispose()
      return { gridH, gridW, channels: 512, stride, srcH, srcW, data: Float32Array.from(data) }
    }
    const stride = 8
    const gridH = Math.ceil(srcH / stride)
    const gridW = Math.ceil(srcW / stride)
    const pooled = tf.tidy(
      () =>
        tf.squeeze(
          tf.avgPool(tf.expandDims(taps.relu3, 0) as tf.Tensor4D, 2, 2, 'same'),
          [0],
        ) as tf.Tensor3D,
    )
    const merged = tf.tidy(() => {
      const a = cropCells(pooled, gridH, gridW)
      const b = cropCells(taps.relu4, gridH, gridW)
      return tf.concat([a, b], 2)
    })
    pooled.dispose()
    const data = merged.dataSync() as Float32Array
    merged.dispose()
    return { gridH, gridW, channels: 768, stride, srcH, srcW, data: Float32Array.from(data) }
  } finally {
    taps.relu3.dispose()
    taps.relu4.dispose()
    taps.relu5.dispose()
  }
}
