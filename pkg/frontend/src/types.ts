export type Box = [number, number, number, number]; // x0, y0, w, h in page pixels

export interface PageInfo {
  page_id: string;
  width: number;
  height: number;
}

export interface Detection {
  page_id: string;
  box: Box;
  score: number;
  rank: number;
}

export interface PageScore {
  page_id: string;
  score: number;
}

export interface QueryResponse {
  query_id: string;
  detections: Detection[];
  pages: PageScore[];
}

export interface CropSelection {
  page_id: string;
  rect: Box;
}
