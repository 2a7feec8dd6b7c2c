import * as fs from 'fs'
import * as os from 'os'
import * as path from 'path'
import { afterAll, describe, expect, it } from 'vitest'
import { downsample2, loadPng, savePng, RgbImage } from '../src/image'
import { encodeRnfm, readRnfm, writeRnfm } from '../src/rnfm'
import { parseArgs, runExport } from '../src/export'
import { extractMap, randomWeights } from '../src/vgg'

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), 'exporter-'))
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }))

function syntheticImage(w: number, h: number, f: (x: number, y: number) => [number, number, number]): RgbImage {
  const data = new Float32Array(w * h * 3)
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const [r, g, b] = f(x, y)
      data[3 * (y * w + x)] = r
      data[3 * (y * w + x) + 1] = g
      data[3 * (y * w + x) + 2] = b
    }
  }
  return { width: w, height: h, data }
}

describe('rnfm', () => {
  it('round-trips bit-exactly', () => {
    const data = new Float32Array(2 * 3 * 4).map((_, i) => Math.fround(Math.sin(i)))
    const p = path.join(tmp, 'a.rnfm')
    writeRnfm(p, { gridH: 2, gridW: 3, channels: 4, stride: 8, srcH: 16, srcW: 24, data })
    const back = readRnfm(p)
    expect(back.gridH).toBe(2)
    expect(back.gridW).toBe(3)
    expect(back.channels).toBe(4)
    expect(back.stride).toBe(8)
    expect(Array.from(back.data)).toEqual(Array.from(data))
  })

  it('rejects truncated files', () => {
    const data = new Float32Array(4)
    const p = path.join(tmp, 'b.rnfm')
    fs.writeFileSync(p, encodeRnfm({ gridH: 1, gridW: 1, channels: 4, stride: 8, srcH: 8, srcW: 8, data }).subarray(0, 40))
    expect(() => readRnfm(p)).toThrow(/expected/)
  })
})

describe('image utils', () => {
  it('png round trip is 8-bit exact', () => {
    const img = syntheticImage(9, 7, (x, y) => [x / 9, y / 7, 0.5])
    const p = path.join(tmp, 'i.png')
    savePng(p, img)
    const back = loadPng(p)
    for (let i = 0; i < img.data.length; i++) {
      expect(Math.abs(back.data[i] - img.data[i])).toBeLessThanOrEqual(0.5 / 255 + 1e-6)
    }
  })

  it('downsample2 averages blocks', () => {
    const img = syntheticImage(4, 4, (x) => [x < 2 ? 0 : 1, 0, 0])
    const half = downsample2(img)
    expect(half.width).toBe(2)
    expect(half.data[0]).toBeCloseTo(0)
    expect(half.data[3 * 1]).toBeCloseTo(1)
  })
})

describe('vgg extractor', () => {
  const weights = randomWeights(42)

  it('mid mode: 64x64 -> 8x8 grid, 768 channels, stride 8', () => {
    const img = syntheticImage(64, 64, (x, y) => [x / 64, y / 64, ((x + y) % 16) / 16])
    const map = extractMap(img, weights, 'mid')
    expect(map.gridH).toBe(8)
    expect(map.gridW).toBe(8)
    expect(map.channels).toBe(768)
    expect(map.stride).toBe(8)
  }, 120000)

  it('deep mode: 64x64 -> 4x4 grid, 512 channels, stride 16', () => {
    const img = syntheticImage(64, 64, (x, y) => [x / 64, 0.3, y / 64])
    const map = extractMap(img, weights, 'deep')
    expect(map.gridH).toBe(4)
    expect(map.gridW).toBe(4)
    expect(map.channels).toBe(512)
    expect(map.stride).toBe(16)
  }, 120000)

  it('non-divisible input pads and records true source dims', () => {
    const img = syntheticImage(36, 20, (x, y) => [0.2, x / 36, y / 20])
    const map = extractMap(img, weights, 'mid')
    expect(map.srcH).toBe(20)
    expect(map.srcW).toBe(36)
    expect(map.gridH).toBe(Math.ceil(20 / 8))
    expect(map.gridW).toBe(Math.ceil(36 / 8))
  }, 120000)

  it('is deterministic across runs', () => {
    const img = syntheticImage(32, 32, (x, y) => [Math.sin(x) * 0.5 + 0.5, y / 32, 0.25])
    const a = extractMap(img, randomWeights(7), 'deep')
    const b = extractMap(img, randomWeights(7), 'deep')
    expect(Array.from(a.data)).toEqual(Array.from(b.data))
  }, 120000)

  it('constant-gray image gives near-constant interior cells', () => {
    const img = syntheticImage(128, 128, () => [0.5, 0.5, 0.5])
    const map = extractMap(img, weights, 'mid')
    // central cells: their receptive field (~92px at block 4) never touches
    // the convolution borders, so translation invariance applies
    const cells: number[][] = []
    for (let i = 7; i < 9; i++) {
      for (let j = 7; j < 9; j++) {
        const base = (i * map.gridW + j) * map.channels
        cells.push(Array.from(map.data.subarray(base, base + map.channels)))
      }
    }
    const mean = new Array(map.channels).fill(0)
    for (const c of cells) c.forEach((v, k) => (mean[k] += v / cells.length))
    let varSum = 0
    let magSum = 0
    for (const c of cells) {
      c.forEach((v, k) => {
        varSum += (v - mean[k]) ** 2
      })
    }
    mean.forEach((m) => (magSum += m * m))
    const variance = varSum / (cells.length * map.channels)
    const magnitude = magSum / map.channels
    expect(variance).toBeLessThan(1e-3 * Math.max(magnitude, 1e-12))
  }, 120000)
})

describe('export cli', () => {
  it('parses flags and validates mode', () => {
    const opts = parseArgs(['export', '--mode', 'mid', '--in', 'a', '--out', 'b', '--half-res', '--random-weights', '--seed', '3'])
    expect(opts.mode).toBe('mid')
    expect(opts.halfRes).toBe(true)
    expect(opts.randomSeed).toBe(3)
    expect(() => parseArgs(['export', '--mode', 'huge', '--in', 'a', '--out', 'b'])).toThrow()
  })

  it('errors actionably without weights', () => {
    const inDir = path.join(tmp, 'imgs0')
    fs.mkdirSync(inDir, { recursive: true })
    savePng(path.join(inDir, 'x.png'), syntheticImage(16, 16, () => [0.5, 0.5, 0.5]))
    expect(() =>
      runExport({ mode: 'mid', inDir, outDir: path.join(tmp, 'o0'), halfRes: false }),
    ).toThrow(/--weights|--random-weights/)
  })

  it('writes identical bytes across runs and half-res halves the grid', () => {
    const inDir = path.join(tmp, 'imgs')
    fs.mkdirSync(inDir, { recursive: true })
    savePng(path.join(inDir, 'a.png'), syntheticImage(32, 32, (x, y) => [x / 32, y / 32, 0.5]))
    const out1 = path.join(tmp, 'o1')
    const out2 = path.join(tmp, 'o2')
    const w1 = runExport({ mode: 'mid', inDir, outDir: out1, halfRes: false, randomSeed: 1 })
    runExport({ mode: 'mid', inDir, outDir: out2, halfRes: false, randomSeed: 1 })
    expect(fs.readFileSync(w1[0]).equals(fs.readFileSync(path.join(out2, path.basename(w1[0]))))).toBe(true)
    const half = runExport({ mode: 'mid', inDir, outDir: path.join(tmp, 'o3'), halfRes: true, randomSeed: 1 })
    const m = readRnfm(half[0])
    expect(m.srcH).toBe(16)
    expect(m.gridH).toBe(2)
  }, 240000)
})
