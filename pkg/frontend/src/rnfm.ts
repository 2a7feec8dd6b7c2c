/**
 * RNFM binary feature-map format.
 *
 * Layout: magic "RNFM", then 7 little-endian u32s (version=1, grid_h,
 * grid_w, channels, stride, src_h, src_w), then grid_h*grid_w*channels
 * little-endian f32 values, row-major with channels last.
 */

import * as fs from 'fs'

export interface FeatureMapFile {
  gridH: number
  gridW: number
  channels: number
  stride: number
  srcH: number
  srcW: number
  /** length gridH*gridW*channels, row-major, channel-last */
  data: Float32Array
}

const MAGIC = 'RNFM'
const VERSION = 1
const HEADER_BYTES = 4 + 7 * 4

export function encodeRnfm(map: FeatureMapFile): Buffer {
  const n = map.gridH * map.gridW * map.channels
  if (map.data.length !== n) {
    throw new Error(`data length ${map.data.length} does not match grid ${map.gridH}x${map.gridW}x${map.channels}`)
  }
  const buf = Buffer.alloc(HEADER_BYTES + 4 * n)
  buf.write(MAGIC, 0, 'ascii')
  const header = [VERSION, map.gridH, map.gridW, map.channels, map.stride, map.srcH, map.srcW]
  header.forEach((v, i) => buf.writeUInt32LE(v, 4 + 4 * i))
  for (let i = 0; i < n; i++) {
    buf.writeFloatLE(map.data[i], HEADER_BYTES + 4 * i)
  }
  return buf
}

export function writeRnfm(path: string, map: FeatureMapFile): void {
  fs.writeFileSync(path, encodeRnfm(map))
}

export function readRnfm(path: string): FeatureMapFile {
  const buf = fs.readFileSync(path)
  if (buf.length < HEADER_BYTES) {
    throw new Error(`${path}: truncated header (${buf.length} bytes)`)
  }
  if (buf.toString('ascii', 0, 4) !== MAGIC) {
    throw new Error(`${path}: bad magic`)
  }
  const [version, gridH, gridW, channels, stride, srcH, srcW] = Array.from(
    { length: 7 },
    (_, i) => buf.readUInt32LE(4 + 4 * i),
  )
  if (version !== VERSION) {
    throw new Error(`${path}: unsupported version ${version}`)
  }
  const n = gridH * gridW * channels
  const expected = HEADER_BYTES + 4 * n
  if (buf.length !== expected) {
    throw new Error(`${path}: expected ${expected} bytes, found ${buf.length}`)
  }
  const data = new Float32Array(n)
  for (let i = 0; i < n; i++) {
    data[i] = buf.readFloatLE(HEADER_BYTES + 4 * i)
  }
  return { gridH, gridW, channels, stride, srcH, srcW, data }
}
