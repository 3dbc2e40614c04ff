/** Shared project/forecast fixtures mirroring the server's data model. */

const MONDAYS = Array.from({ length: 8 }, (_, k) => {
  const date = new Date(Date.UTC(2026, 0, 5 + 7 * k));
  return date.toISOString().slice(0, 10);
});

export const TIMEZEROS = MONDAYS.slice(0, 5);

export const PROJECT_CONFIG = {
  name: "sdk-exercise",
  description: "client SDK test project",
  visibility: "public",
  units: [{ code: "US" }, { code: "MA" }, { code: "NY" }],
  targets: [
    {
      name: "pct wk1",
      type: "continuous",
      range: [0.0, 100.0],
      categories: Array.from({ length: 10 }, (_, i) => i * 10.0),
      is_step_ahead: true,
      step_unit: "week",
      step_count: 1,
    },
    {
      name: "cases wk2",
      type: "discrete",
      range: [0, 1000],
      categories: Array.from({ length: 51 }, (_, i) => i),
      is_step_ahead: true,
      step_unit: "week",
      step_count: 2,
    },
    { name: "severity", type: "nominal", categories: ["low", "moderate", "high"] },
    { name: "above baseline", type: "binary" },
    { name: "peak week", type: "date", categories: MONDAYS },
  ],
  timezeros: TIMEZEROS.map((date) => ({ date })),
};

export interface PredictionRecord {
  unit: string;
  target: string;
  class: string;
  prediction: Record<string, unknown>;
}

/** All valid element kinds per target, with deliberately unsorted samples. */
export function fullDocument(units: string[]): { predictions: PredictionRecord[] } {
  const predictions: PredictionRecord[] = [];
  for (const unit of units) {
    predictions.push(
      { unit, target: "pct wk1", class: "point", prediction: { value: 42.5 } },
      {
        unit,
        target: "pct wk1",
        class: "named",
        prediction: { family: "norm", param1: 40.0, param2: 5.0 },
      },
      {
        unit,
        target: "pct wk1",
        class: "bin",
        prediction: {
          cat: Array.from({ length: 10 }, (_, i) => i * 10.0),
          prob: Array(10).fill(0.1),
        },
      },
      {
        unit,
        target: "pct wk1",
        class: "sample",
        prediction: { sample: [44.5, 35.0, 41.0, 39.5] },
      },
      {
        unit,
        target: "pct wk1",
        class: "quantile",
        prediction: { quantile: [0.25, 0.5, 0.75], value: [35.0, 42.0, 50.0] },
      },
      { unit, target: "cases wk2", class: "point", prediction: { value: 12 } },
      {
        unit,
        target: "cases wk2",
        class: "sample",
        prediction: { sample: [15, 9, 12] },
      },
      {
        unit,
        target: "severity",
        class: "bin",
        prediction: { cat: ["low", "moderate", "high"], prob: [0.2, 0.5, 0.3] },
      },
      {
        unit,
        target: "severity",
        class: "sample",
        prediction: { sample: ["moderate", "low", "moderate"] },
      },
      { unit, target: "above baseline", class: "bin", prediction: { cat: [true], prob: [0.7] } },
      {
        unit,
        target: "peak week",
        class: "sample",
        prediction: { sample: [MONDAYS[2], MONDAYS[1], MONDAYS[2]] },
      },
    );
  }
  return { predictions };
}

export function truthCsv(units: string[], timezero: string): string {
  const lines = ["timezero,unit,target,value"];
  for (const unit of units) {
    lines.push(
      `${timezero},${unit},pct wk1,42.7`,
      `${timezero},${unit},cases wk2,13`,
      `${timezero},${unit},severity,moderate`,
      `${timezero},${unit},above baseline,true`,
      `${timezero},${unit},peak week,${MONDAYS[2]}`,
    );
  }
  return lines.join("\n") + "\n";
}

/** Small deterministic PRNG so the randomized filter sets are replayable. */
export function lcg(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (1664525 * state + 1013904223) >>> 0;
    return state / 2 ** 32;
  };
}

export function sampleSubset<T>(values: T[], rand: () => number): T[] | undefined {
  if (rand() < 0.35) {
    return undefined;
  }
  const count = 1 + Math.floor(rand() * values.length);
  const shuffled = [...values].sort(() => rand() - 0.5);
  return shuffled.slice(0, count).sort();
}
