import { describe, expect, it } from "vitest";
import { column, DataError, parseCsv, requireColumns } from "../src/csv.js";

const SAMPLE = "epsilon,error,se\n0.0625,0.01,0.001\n0.03125,0.005,0.0005\n";

describe("parseCsv", () => {
  it("splits header and rows on plain newlines", () => {
    const t = parseCsv(SAMPLE);
    expect(t.header).toEqual(["epsilon", "error", "se"]);
    expect(t.rows).toHaveLength(2);
  });

  it("rejects ragged rows with the row number", () => {
    expect(() => parseCsv("a,b\n1\n")).toThrow(/row 1 has 1 cells/);
  });

  it("rejects an empty file", () => {
    expect(() => parseCsv("")).toThrow(DataError);
  });
});

describe("column", () => {
  it("extracts numbers by name", () => {
    expect(column(parseCsv(SAMPLE), "error")).toEqual([0.01, 0.005]);
  });

  it("names the missing column in its error", () => {
    expect(() => column(parseCsv(SAMPLE), "deviation")).toThrow(
      /missing column 'deviation'/,
    );
  });

  it("flags non-numeric cells with row context", () => {
    expect(() => column(parseCsv("x\nfoo\n"), "x")).toThrow(/'foo' is not a finite number/);
  });
});

describe("requireColumns", () => {
  it("passes when all columns exist and throws on the first absent one", () => {
    const t = parseCsv(SAMPLE);
    expect(() => requireColumns(t, ["epsilon", "se"])).not.toThrow();
    expect(() => requireColumns(t, ["epsilon", "n_reps"])).toThrow(/missing column 'n_reps'/);
  });
});
