/**
 * Reader for the harness's pinned CSV format: UTF-8, one header row,
 * comma separators, '.' decimal, '\n' line endings. No quoting is ever
 * produced by the writer, so none is parsed here.
 */

export class DataError extends Error {}

export interface Table {
  header: string[];
  rows: string[][];
}

export function parseCsv(text: string): Table {
  const lines = text.split("\n").filter((line) => line.length > 0);
  if (lines.length === 0) {
    throw new DataError("empty CSV: no header row");
  }
  const header = lines[0].split(",");
  const rows = lines.slice(1).map((line, i) => {
    const cells = line.split(",");
    if (cells.length !== header.length) {
      throw new DataError(
        `row ${i + 1} has ${cells.length} cells, header has ${header.length}`,
      );
    }
    return cells;
  });
  return { header, rows };
}

/** Numeric column by name; throws naming the column when it is absent. */
export function column(table: Table, name: string): number[] {
  const idx = table.header.indexOf(name);
  if (idx < 0) {
    throw new DataError(
      `missing column '${name}' (header: ${table.header.join(", ")})`,
    );
  }
  return table.rows.map((cells, i) => {
    const v = Number(cells[idx]);
    if (!Number.isFinite(v)) {
      throw new DataError(`column '${name}' row ${i + 1}: '${cells[idx]}' is not a finite number`);
    }
    return v;
  });
}

export function requireColumns(table: Table, names: string[]): void {
  for (const name of names) {
    if (!table.header.includes(name)) {
      throw new DataError(
        `missing column '${name}' (header: ${table.header.join(", ")})`,
      );
    }
  }
}
