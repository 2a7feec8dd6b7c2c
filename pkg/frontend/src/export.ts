/**
 * Batch exporter: runs the VGG16 extractor over a directory of PNGs and
 * writes one RNFM file per image.
 *
 * Usage:
 *   ts-node src/export.ts export --mode mid --in imgs/ --out maps/ \
 *       [--half-res] (--weights <tfjs-model-dir> | --random-weights [--seed N])
 */

import * as fs from 'fs'
import * as path from 'path'
import { downsample2, loadPng } from './image'
import { writeRnfm } from './rnfm'
import { extractMap, loadWeightsFromDir, randomWeights, VggWeights } from './vgg'

export interface ExportOptions {
  mode: 'mid' | 'deep'
  inDir: string
  outDir: string
  halfRes: boolean
  weightsDir?: string
  randomSeed?: number
}

export function parseArgs(argv: string[]): ExportOptions {
  if (argv[0] !== 'export') {
    throw new Error(`unknown command ${argv[0] ?? '(none)'}; expected "export"`)
  }
  const opts: Partial<ExportOptions> = { halfRes: false }
  for (let i = 1; i < argv.length; i++) {
    const arg = argv[i]
    switch (arg) {
      case '--mode': {
        const v = argv[++i]
        if (v !== 'mid' && v !== 'deep') throw new Error(`--mode must be mid or deep, got ${v}`)
        opts.mode = v
        break
      }
      case '--in':
        opts.inDir = argv[++i]
        break
      case '--out':
        opts.outDir = argv[++i]
        break
      case '--half-res':
        opts.halfRes = true
        break
      case '--weights':
        opts.weightsDir = argv[++i]
        break
      case '--random-weights':
        opts.randomSeed = opts.randomSeed ?? 0
        break
      case '--seed':
        opts.randomSeed = Number(argv[++i])
        break
      default:
        throw new Error(`unknown flag ${arg}`)
    }
  }
  if (!opts.mode) throw new Error('--mode is required')
  if (!opts.inDir) throw new Error('--in is required')
  if (!opts.outDir) throw new Error('--out is required')
  return opts as ExportOptions
}

export function resolveWeights(opts: ExportOptions): VggWeights {
  if (opts.weightsDir) return loadWeightsFromDir(opts.weightsDir)
  if (opts.randomSeed !== undefined) return randomWeights(opts.randomSeed)
  throw new Error(
    'no weights: pass --weights <tfjs-model-dir> with pretrained VGG16, or ' +
      '--random-weights [--seed N] for architecture-level testing',
  )
}

export function runExport(opts: ExportOptions): string[] {
  const weights = resolveWeights(opts)
  const files = fs
    .readdirSync(opts.inDir)
    .filter((f) => f.toLowerCase().endsWith('.png'))
    .sort()
  if (files.length === 0) {
    throw new Error(`no .png files under ${opts.inDir}`)
  }
  fs.mkdirSync(opts.outDir, { recursive: true })
  const written: string[] = []
  for (const file of files) {
    let img = loadPng(path.join(opts.inDir, file))
    if (opts.halfRes) img = downsample2(img)
    const map = extractMap(img, weights, opts.mode)
    const outPath = path.join(opts.outDir, `${path.parse(file).name}.${opts.mode}.rnfm`)
    writeRnfm(outPath, {
      gridH: map.gridH,
      gridW: map.gridW,
      channels: map.channels,
      stride: map.stride,
      srcH: map.srcH,
      srcW: map.srcW,
      data: map.data,
    })
    written.push(outPath)
  }
  return written
}

if (require.main === module) {
  try {
    const written = runExport(parseArgs(process.argv.slice(2)))
    for (const p of written) console.log(p)
  } catch (err) {
    console.error(String(err instanceof Error ? err.message : err))
    process.exit(1)
  }
}
