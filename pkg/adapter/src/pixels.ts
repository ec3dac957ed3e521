// PNG decode helper for the real-model image path. Loaded lazily so the
// hash backend stays dependency-free.

export interface Pixels {
  data: Int32Array
  width: number
  height: number
}

export async function decodeImage(bytes: Buffer): Promise<Pixels> {
  let PNG: any
  try {
    ;({ PNG } = await import('pngjs' as string))
  } catch {
    throw new Error('image decoding requires the optional "pngjs" package')
  }
  const png = PNG.sync.read(bytes)
  const { width, height } = png
  const rgb = new Int32Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    rgb[i * 3] = png.data[i * 4]
    rgb[i * 3 + 1] = png.data[i * 4 + 1]
    rgb[i * 3 + 2] = png.data[i * 4 + 2]
  }
  return { data: rgb, width, height }
}
