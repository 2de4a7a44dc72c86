import seedrandom from "seedrandom";

export type Rng = () => number;

/** Deterministic uniform stream on [0, 1) keyed by a seed string. */
export function rngFrom(seed: string): Rng {
  return seedrandom(seed);
}

/** Standard normal draw (Box-Muller, cosine branch only). */
export function gaussian(rng: Rng): number {
  let u = 0;
  while (u === 0) u = rng(); // log(0) would poison the stream
  return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * rng());
}

/** Fisher-Yates shuffle driven by the given stream. */
export function shuffleInPlace<T>(rng: Rng, items: T[]): T[] {
  for (let i = items.length - 1; i > 0; i--) {
    const j = Math.floor(rng() * (i + 1));
    const tmp = items[i];
    items[i] = items[j];
    items[j] = tmp;
  }
  return items;
}
