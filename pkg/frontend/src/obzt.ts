// OBZT tensor codec (little-endian): "OBZT" | version 1 | dtype 1 (f32) |
// ndim 1..4 | reserved 0 | ndim x u32 dims | row-major float32 payload.

export interface Tensor {
  dims: number[];
  values: Float32Array;
}

const MAGIC = [0x4f, 0x42, 0x5a, 0x54]; // "OBZT"

export class CorruptTensorError extends Error {
  constructor(message: string, readonly offset: number) {
    super(`${message} (offset ${offset})`);
  }
}

export function decodeTensor(data: ArrayBuffer | Uint8Array): Tensor {
  const bytes = data instanceof Uint8Array ? data : new Uint8Array(data);
  if (bytes.length < 8) throw new CorruptTensorError("truncated header", bytes.length);
  for (let i = 0; i < 4; i++) {
    if (bytes[i] !== MAGIC[i]) throw new CorruptTensorError("bad magic", 0);
  }
  if (bytes[4] !== 1) throw new CorruptTensorError(`unsupported version ${bytes[4]}`, 4);
  if (bytes[5] !== 1) throw new CorruptTensorError(`unsupported dtype ${bytes[5]}`, 5);
  const ndim = bytes[6];
  if (ndim < 1 || ndim > 4) throw new CorruptTensorError(`ndim ${ndim} outside 1..4`, 6);
  if (bytes[7] !== 0) throw new CorruptTensorError(`reserved byte is ${bytes[7]}`, 7);

  const dimsEnd = 8 + 4 * ndim;
  if (bytes.length < dimsEnd) throw new CorruptTensorError("truncated dims", bytes.length);
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const dims: number[] = [];
  let count = 1;
  for (let i = 0; i < ndim; i++) {
    const d = view.getUint32(8 + 4 * i, true);
    if (d === 0) throw new CorruptTensorError(`dim ${i} is zero`, 8 + 4 * i);
    dims.push(d);
    count *= d;
  }
  const expected = dimsEnd + 4 * count;
  if (bytes.length < expected) throw new CorruptTensorError("truncated payload", bytes.length);
  if (bytes.length > expected) throw new CorruptTensorError("trailing bytes", expected);

  const values = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    const v = view.getFloat32(dimsEnd + 4 * i, true);
    if (!Number.isFinite(v)) {
      throw new CorruptTensorError("non-finite payload value", dimsEnd + 4 * i);
    }
    values[i] = v;
  }
  return { dims, values };
}

export function encodeTensor(tensor: Tensor): Uint8Array {
  const { dims, values } = tensor;
  if (dims.length < 1 || dims.length > 4) throw new Error(`ndim must be 1..4, got ${dims.length}`);
  const count = dims.reduce((a, b) => a * b, 1);
  if (values.length !== count) throw new Error(`expected ${count} values, got ${values.length}`);
  const out = new Uint8Array(8 + 4 * dims.length + 4 * count);
  const view = new DataView(out.buffer);
  out.set(MAGIC, 0);
  out[4] = 1;
  out[5] = 1;
  out[6] = dims.length;
  out[7] = 0;
  dims.forEach((d, i) => view.setUint32(8 + 4 * i, d, true));
  values.forEach((v, i) => view.setFloat32(8 + 4 * dims.length + 4 * i, v, true));
  return out;
}
