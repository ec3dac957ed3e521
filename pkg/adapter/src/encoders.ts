// Encoder backends. `hash-<dim>` is fully deterministic and dependency-free;
// `use` (universal sentence encoder) and `mobilenet` load TensorFlow.js
// models when their weights are reachable.

import { createHash } from 'node:crypto'

export interface TextEncoder {
  readonly dim: number
  readonly name: string
  embedTexts(texts: string[]): Promise<Float32Array[]>
}

export interface ImageEncoder {
  readonly dim: number
  readonly name: string
  readonly preprocess: string
  embedImage(bytes: Buffer): Promise<Float32Array>
}

export function l2Normalize(v: Float32Array): Float32Array {
  let sum = 0
  for (let i = 0; i < v.length; i++) sum += v[i] * v[i]
  const norm = Math.sqrt(sum)
  if (norm < 1e-12) throw new Error('zero vector cannot be normalized')
  const out = new Float32Array(v.length)
  for (let i = 0; i < v.length; i++) out[i] = v[i] / norm
  return out
}

export function cosine(a: Float32Array, b: Float32Array): number {
  let dot = 0
  let na = 0
  let nb = 0
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i]
    na += a[i] * a[i]
    nb += b[i] * b[i]
  }
  return dot / Math.sqrt(na * nb)
}

// Deterministic unit vector from a salt string: sha256 re-hashed in counter
// mode seeds a gaussian draw via Box-Muller.
function hashUnitVector(dim: number, salt: string): Float32Array {
  const values = new Float32Array(dim)
  let counter = 0
  let pool: Buffer = Buffer.alloc(0)
  let offset = 0
  const refill = () => {
    pool = createHash('sha256').update(`${salt}${counter++}`).digest()
    offset = 0
  }
  const nextUniform = () => {
    if (offset + 4 > pool.length) refill()
    const u = pool.readUInt32LE(offset)
    offset += 4
    return (u + 1) / 4294967297 // strictly inside (0, 1)
  }
  refill()
  for (let i = 0; i < dim; i += 2) {
    const u1 = nextUniform()
    const u2 = nextUniform()
    const r = Math.sqrt(-2 * Math.log(u1))
    values[i] = r * Math.cos(2 * Math.PI * u2)
    if (i + 1 < dim) values[i + 1] = r * Math.sin(2 * Math.PI * u2)
  }
  return l2Normalize(values)
}

class HashTextEncoder implements TextEncoder {
  constructor(
    readonly dim: number,
    readonly name: string,
    private space: string,
  ) {}

  async embedTexts(texts: string[]): Promise<Float32Array[]> {
    return texts.map((t) => hashUnitVector(this.dim, `${this.space}text${t}`))
  }
}

class HashImageEncoder implements ImageEncoder {
  readonly preprocess = 'sha256-bytes'

  constructor(
    readonly dim: number,
    readonly name: string,
  ) {}

  async embedImage(bytes: Buffer): Promise<Float32Array> {
    const digest = createHash('sha256').update(bytes).digest('hex')
    return hashUnitVector(this.dim, `image${digest}`)
  }
}

class UseTextEncoder implements TextEncoder {
  readonly dim = 512
  readonly name = 'universal-sentence-encoder'
  private model: any = null

  private async load() {
    if (!this.model) {
      const use = await import('@tensorflow-models/universal-sentence-encoder' as string)
      this.model = await use.load()
    }
    return this.model
  }

  async embedTexts(texts: string[]): Promise<Float32Array[]> {
    const model = await this.load()
    const tensor = await model.embed(texts)
    const rows = (await tensor.array()) as number[][]
    tensor.dispose()
    return rows.map((r) => l2Normalize(Float32Array.from(r)))
  }
}

class MobilenetImageEncoder implements ImageEncoder {
  readonly dim = 1024
  readonly name = 'mobilenet-v1'
  readonly preprocess = 'decode-resize224-scale01'
  private model: any = null
  private tf: any = null

  private async load() {
    if (!this.model) {
      this.tf = await import('@tensorflow/tfjs' as string)
      const mobilenet = await import('@tensorflow-models/mobilenet' as string)
      this.model = await mobilenet.load({ version: 1, alpha: 1.0 })
    }
    return this.model
  }

  async embedImage(bytes: Buffer): Promise<Float32Array> {
    const model = await this.load()
    const { decodeImage } = await import('./pixels.js')
    const pixels = await decodeImage(bytes)
    const input = this.tf.tensor3d(pixels.data, [pixels.height, pixels.width, 3], 'int32')
    const activation = model.infer(input, true)
    const row = (await activation.array()) as number[][]
    input.dispose()
    activation.dispose()
    return l2Normalize(Float32Array.from(row[0]))
  }
}

export function makeTextEncoder(modelId: string, space: string): TextEncoder {
  const hashMatch = /^hash-(\d+)$/.exec(modelId)
  if (hashMatch) return new HashTextEncoder(Number(hashMatch[1]), modelId, space)
  if (modelId === 'use') return new UseTextEncoder()
  throw new Error(`unknown text model id: ${modelId}`)
}

export function makeImageEncoder(modelId: string): ImageEncoder {
  const hashMatch = /^hash-(\d+)$/.exec(modelId)
  if (hashMatch) return new HashImageEncoder(Number(hashMatch[1]), modelId)
  if (modelId === 'mobilenet') return new MobilenetImageEncoder()
  throw new Error(`unknown image model id: ${modelId}`)
}
